#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pvd/tensor.hpp"

namespace pvd {

struct AdamConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // decoupled
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& params, double lr_override = -1.0);
    int steps_taken() const { return t_; }

  private:
    AdamConfig cfg_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// One-cycle learning-rate schedule: linear warmup to max_lr, then cosine
// anneal down to max_lr / final_div.
struct OneCycle {
    double max_lr = 0.003;
    double div_factor = 10.0;
    double final_div = 100.0;
    double pct_start = 0.3;
    int total_steps = 1;

    double lr_at(int step) const {
        const double lo = max_lr / div_factor;
        const double fin = max_lr / final_div;
        const int warm = std::max(1, static_cast<int>(pct_start * total_steps));
        if (step < warm) {
            const double t = static_cast<double>(step) / warm;
            return lo + (max_lr - lo) * t;
        }
        const double t =
            static_cast<double>(step - warm) / std::max(1, total_steps - warm);
        return fin + 0.5 * (max_lr - fin) * (1.0 + std::cos(M_PI * std::min(1.0, t)));
    }
};

}  // namespace pvd
