#include "pvd/optim.hpp"

namespace pvd {

void Adam::step(ParamStore& params, double lr_override) {
    ++t_;
    const double lr = lr_override > 0.0 ? lr_override : cfg_.lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (const auto& name : params.names()) {
        Parameter& p = params.at(name);
        Tensor& m = m_.try_emplace(name, Tensor::zeros(p.value.shape)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(p.value.shape)).first->second;
        for (size_t i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                cfg_.weight_decay * p.value[i]);
        }
    }
}

}  // namespace pvd
