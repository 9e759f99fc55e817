#include "pvd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace pvd {

std::string Shape::str() const {
    std::ostringstream ss;
    ss << '(';
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) ss << ',';
        ss << dims[i];
    }
    ss << ')';
    return ss.str();
}

Tensor Tensor::zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(t.shape.numel(), 0.0);
    return t;
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) { return full(Shape{1}, v); }

Tensor Tensor::from(Shape s, std::vector<double> d) {
    if (s.numel() != d.size()) throw ShapeError("tensor data/shape mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

Parameter& ParamStore::create(const std::string& name, Shape shape,
                              const std::function<void(Tensor&)>& init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (!(it->second.value.shape == shape))
            throw ShapeError("parameter " + name + " re-created with different shape");
        return it->second;
    }
    Parameter p;
    p.name = name;
    p.value = Tensor::zeros(shape);
    p.grad = Tensor::zeros(shape);
    init(p.value);
    return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::uniform(const std::string& name, Shape shape,
                               std::mt19937_64& rng) {
    return create(name, shape, [&](Tensor& t) {
        const size_t fan_in = t.shape.rank() > 1
                                  ? t.numel() / static_cast<size_t>(t.shape[0])
                                  : t.numel();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> d(-bound, bound);
        for (auto& v : t.data) v = d(rng);
    });
}

Parameter& ParamStore::zeros(const std::string& name, Shape shape) {
    return create(name, shape, [](Tensor&) {});
}

Parameter& ParamStore::ones(const std::string& name, Shape shape) {
    return create(name, shape, [](Tensor& t) {
        std::fill(t.data.begin(), t.data.end(), 1.0);
    });
}

Parameter& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("unknown parameter " + name);
    return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("unknown parameter " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_)
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : params_) out.push_back(n);
    return out;
}

void ParamStore::save(const std::string& path_prefix) const {
    std::ofstream manifest(path_prefix + ".manifest");
    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    if (!manifest || !bin) throw std::runtime_error("cannot write checkpoint " + path_prefix);
    for (const auto& [name, p] : params_) {
        manifest << name;
        for (int d : p.value.shape.dims) manifest << ' ' << d;
        manifest << '\n';
        bin.write(reinterpret_cast<const char*>(p.value.data.data()),
                  static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    }
}

void ParamStore::load(const std::string& path_prefix) {
    std::ifstream manifest(path_prefix + ".manifest");
    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    if (!manifest || !bin) throw std::runtime_error("cannot open checkpoint " + path_prefix);
    params_.clear();
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name;
        ss >> name;
        std::vector<int> dims;
        int d;
        while (ss >> d) dims.push_back(d);
        Parameter p;
        p.name = name;
        p.value = Tensor::zeros(Shape(dims));
        p.grad = Tensor::zeros(Shape(dims));
        bin.read(reinterpret_cast<char*>(p.value.data.data()),
                 static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("checkpoint blob truncated");
        params_.emplace(name, std::move(p));
    }
}

// ---------------------------------------------------------------------------

Var Graph::make(Tensor value, std::function<void(Graph&)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

Var Graph::constant(Tensor t) { return make(std::move(t), nullptr); }

Var Graph::param(Parameter& p) {
    Var out = make(p.value, nullptr);
    Node& n = nodes_.back();
    n.param = &p;
    n.back = [out](Graph& g) {
        Node& self = g.nodes_[static_cast<size_t>(out.id)];
        Tensor& go = g.grad(out);
        for (size_t i = 0; i < go.numel(); ++i) self.param->grad[i] += go[i];
    };
    return out;
}

void Graph::backward(Var loss) {
    if (val(loss).numel() != 1) throw ShapeError("backward requires a scalar loss");
    grad(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back && !n.grad.empty()) n.back(*this);
    }
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape == b.shape))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape.str() +
                         " vs " + b.shape.str());
}
}  // namespace

Var Graph::add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (size_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    return make(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& ga = g.grad(a);
        Tensor& gb = g.grad(b);
        for (size_t i = 0; i < go.numel(); ++i) {
            ga[i] += go[i];
            gb[i] += go[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (size_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
    return make(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& ga = g.grad(a);
        Tensor& gb = g.grad(b);
        for (size_t i = 0; i < go.numel(); ++i) {
            ga[i] += go[i];
            gb[i] -= go[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    return make(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& ta = g.val(a);
        const Tensor& tb = g.val(b);
        Tensor& ga = g.grad(a);
        Tensor& gb = g.grad(b);
        for (size_t i = 0; i < go.numel(); ++i) {
            ga[i] += go[i] * tb[i];
            gb[i] += go[i] * ta[i];
        }
    });
}

Var Graph::scale(Var a, double s) {
    Tensor out = val(a);
    for (auto& v : out.data) v *= s;
    return make(std::move(out), [a, s, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < go.numel(); ++i) ga[i] += s * go[i];
    });
}

Var Graph::add_scalar(Var a, double s) {
    Tensor out = val(a);
    for (auto& v : out.data) v += s;
    return make(std::move(out), [a, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double v : val(a).data) s += v;
    return make(Tensor::scalar(s), [a, id = static_cast<int>(nodes_.size())](Graph& g) {
        const double go = g.grad(Var{id})[0];
        Tensor& ga = g.grad(a);
        for (auto& v : ga.data) v += go;
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
}  // namespace

Var Graph::gelu(Var x) {
    Tensor out = val(x);
    for (auto& v : out.data) v = v * gauss_cdf(v);
    return make(std::move(out), [x, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        Tensor& gx = g.grad(x);
        for (size_t i = 0; i < go.numel(); ++i) {
            const double v = tx[i];
            const double d = gauss_cdf(v) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += go[i] * d;
        }
    });
}

Var Graph::sigmoid(Var x) {
    Tensor out = val(x);
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make(std::move(out), [x, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& y = g.val(Var{id});
        Tensor& gx = g.grad(x);
        for (size_t i = 0; i < go.numel(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
    });
}

Var Graph::linear(Var x, Var weight, Var bias) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(weight);
    const Tensor& tb = val(bias);
    if (tx.shape.rank() < 1 || tw.shape.rank() != 2)
        throw ShapeError("linear: bad ranks");
    const int c_in = tx.shape[0];
    const int c_out = tw.shape[0];
    if (tw.shape[1] != c_in || tb.shape.numel() != static_cast<size_t>(c_out))
        throw ShapeError("linear: weight " + tw.shape.str() + " incompatible with x " +
                         tx.shape.str());
    const size_t m = tx.numel() / static_cast<size_t>(c_in);
    Shape out_shape = tx.shape;
    out_shape.dims[0] = c_out;
    Tensor out = Tensor::zeros(out_shape);
    for (int co = 0; co < c_out; ++co) {
        const double b = tb[static_cast<size_t>(co)];
        double* yrow = &out.data[static_cast<size_t>(co) * m];
        for (size_t j = 0; j < m; ++j) yrow[j] = b;
        for (int ci = 0; ci < c_in; ++ci) {
            const double w = tw[static_cast<size_t>(co) * c_in + ci];
            const double* xrow = &tx.data[static_cast<size_t>(ci) * m];
            for (size_t j = 0; j < m; ++j) yrow[j] += w * xrow[j];
        }
    }
    return make(std::move(out), [x, weight, bias, c_in, c_out, m,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tw = g.val(weight);
        Tensor& gx = g.grad(x);
        Tensor& gw = g.grad(weight);
        Tensor& gb = g.grad(bias);
        for (int co = 0; co < c_out; ++co) {
            const double* grow = &go.data[static_cast<size_t>(co) * m];
            double s = 0.0;
            for (size_t j = 0; j < m; ++j) s += grow[j];
            gb[static_cast<size_t>(co)] += s;
            for (int ci = 0; ci < c_in; ++ci) {
                const double w = tw[static_cast<size_t>(co) * c_in + ci];
                const double* xrow = &tx.data[static_cast<size_t>(ci) * m];
                double* gxrow = &gx.data[static_cast<size_t>(ci) * m];
                double dw = 0.0;
                for (size_t j = 0; j < m; ++j) {
                    dw += grow[j] * xrow[j];
                    gxrow[j] += w * grow[j];
                }
                gw[static_cast<size_t>(co) * c_in + ci] += dw;
            }
        }
    });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& tx = val(x);
    const int c = tx.shape[0];
    const size_t m = tx.numel() / static_cast<size_t>(c);
    if (val(gamma).numel() != static_cast<size_t>(c) ||
        val(beta).numel() != static_cast<size_t>(c))
        throw ShapeError("layer_norm: scale/shift must match channel count");
    const Tensor& tg = val(gamma);
    const Tensor& tb = val(beta);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t j = 0; j < m; ++j) {
        double mu = 0.0;
        for (int i = 0; i < c; ++i) mu += tx[static_cast<size_t>(i) * m + j];
        mu /= c;
        double var = 0.0;
        for (int i = 0; i < c; ++i) {
            const double d = tx[static_cast<size_t>(i) * m + j] - mu;
            var += d * d;
        }
        var /= c;
        const double istd = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < c; ++i) {
            const double xh = (tx[static_cast<size_t>(i) * m + j] - mu) * istd;
            out[static_cast<size_t>(i) * m + j] = tg[static_cast<size_t>(i)] * xh +
                                                  tb[static_cast<size_t>(i)];
        }
    }
    return make(std::move(out), [x, gamma, beta, c, m, eps,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tg = g.val(gamma);
        Tensor& gx = g.grad(x);
        Tensor& gg = g.grad(gamma);
        Tensor& gb = g.grad(beta);
        for (size_t j = 0; j < m; ++j) {
            double mu = 0.0;
            for (int i = 0; i < c; ++i) mu += tx[static_cast<size_t>(i) * m + j];
            mu /= c;
            double var = 0.0;
            for (int i = 0; i < c; ++i) {
                const double d = tx[static_cast<size_t>(i) * m + j] - mu;
                var += d * d;
            }
            var /= c;
            const double istd = 1.0 / std::sqrt(var + eps);
            double sum1 = 0.0, sum2 = 0.0;
            for (int i = 0; i < c; ++i) {
                const size_t k = static_cast<size_t>(i) * m + j;
                const double xh = (tx[k] - mu) * istd;
                const double dxh = go[k] * tg[static_cast<size_t>(i)];
                gg[static_cast<size_t>(i)] += go[k] * xh;
                gb[static_cast<size_t>(i)] += go[k];
                sum1 += dxh;
                sum2 += dxh * xh;
            }
            for (int i = 0; i < c; ++i) {
                const size_t k = static_cast<size_t>(i) * m + j;
                const double xh = (tx[k] - mu) * istd;
                const double dxh = go[k] * tg[static_cast<size_t>(i)];
                gx[k] += istd * (dxh - sum1 / c - xh * sum2 / c);
            }
        }
    });
}

Var Graph::softmax_axis0(Var x) {
    const Tensor& tx = val(x);
    const int k = tx.shape[0];
    const size_t m = tx.numel() / static_cast<size_t>(k);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t j = 0; j < m; ++j) {
        double mx = -1e300;
        for (int i = 0; i < k; ++i) mx = std::max(mx, tx[static_cast<size_t>(i) * m + j]);
        double z = 0.0;
        for (int i = 0; i < k; ++i) {
            const double e = std::exp(tx[static_cast<size_t>(i) * m + j] - mx);
            out[static_cast<size_t>(i) * m + j] = e;
            z += e;
        }
        for (int i = 0; i < k; ++i) out[static_cast<size_t>(i) * m + j] /= z;
    }
    return make(std::move(out), [x, k, m, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& y = g.val(Var{id});
        Tensor& gx = g.grad(x);
        for (size_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (int i = 0; i < k; ++i) {
                const size_t p = static_cast<size_t>(i) * m + j;
                dot += go[p] * y[p];
            }
            for (int i = 0; i < k; ++i) {
                const size_t p = static_cast<size_t>(i) * m + j;
                gx[p] += y[p] * (go[p] - dot);
            }
        }
    });
}

namespace {
void check_points_shape(const Tensor& x, const std::vector<int>& counts,
                        const char* op) {
    if (x.shape.rank() != 3)
        throw ShapeError(std::string(op) + ": expected (C,V,N), got " + x.shape.str());
    if (static_cast<size_t>(x.shape[1]) != counts.size())
        throw ShapeError(std::string(op) + ": counts size mismatch");
}
}  // namespace

Var Graph::masked_max_points(Var x, const std::vector<int>& counts) {
    const Tensor& tx = val(x);
    check_points_shape(tx, counts, "masked_max_points");
    const int c = tx.shape[0], v = tx.shape[1], n = tx.shape[2];
    Tensor out = Tensor::zeros(Shape{c, v});
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < v; ++j) {
            const int cnt = counts[static_cast<size_t>(j)];
            if (cnt == 0) continue;
            const double* row = &tx.data[(static_cast<size_t>(i) * v + j) * n];
            double best = row[0];
            for (int p = 1; p < cnt; ++p) best = std::max(best, row[p]);
            out[static_cast<size_t>(i) * v + j] = best;
        }
    return make(std::move(out), [x, counts, c, v, n,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < v; ++j) {
                const int cnt = counts[static_cast<size_t>(j)];
                if (cnt == 0) continue;
                const double* row = &tx.data[(static_cast<size_t>(i) * v + j) * n];
                int arg = 0;
                for (int p = 1; p < cnt; ++p)
                    if (row[p] > row[arg]) arg = p;  // ties keep the first max
                gx.data[(static_cast<size_t>(i) * v + j) * n + arg] +=
                    go[static_cast<size_t>(i) * v + j];
            }
    });
}

Var Graph::broadcast_points(Var x, const std::vector<int>& counts, int n) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() != 2) throw ShapeError("broadcast_points: expected (C,V)");
    const int c = tx.shape[0], v = tx.shape[1];
    Tensor out = Tensor::zeros(Shape{c, v, n});
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < v; ++j) {
            const int cnt = std::min(counts[static_cast<size_t>(j)], n);
            const double val_ij = tx[static_cast<size_t>(i) * v + j];
            double* row = &out.data[(static_cast<size_t>(i) * v + j) * n];
            for (int p = 0; p < cnt; ++p) row[p] = val_ij;
        }
    return make(std::move(out), [x, counts, c, v, n,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < v; ++j) {
                const int cnt = std::min(counts[static_cast<size_t>(j)], n);
                const double* row = &go.data[(static_cast<size_t>(i) * v + j) * n];
                double s = 0.0;
                for (int p = 0; p < cnt; ++p) s += row[p];
                gx[static_cast<size_t>(i) * v + j] += s;
            }
    });
}

Var Graph::mask_points(Var x, const std::vector<int>& counts) {
    const Tensor& tx = val(x);
    check_points_shape(tx, counts, "mask_points");
    const int c = tx.shape[0], v = tx.shape[1], n = tx.shape[2];
    Tensor out = tx;
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < v; ++j) {
            double* row = &out.data[(static_cast<size_t>(i) * v + j) * n];
            for (int p = counts[static_cast<size_t>(j)]; p < n; ++p) row[p] = 0.0;
        }
    return make(std::move(out), [x, counts, c, v, n,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < v; ++j) {
                const int cnt = counts[static_cast<size_t>(j)];
                const size_t base = (static_cast<size_t>(i) * v + j) * n;
                for (int p = 0; p < cnt; ++p) gx[base + p] += go[base + p];
            }
    });
}

Var Graph::masked_softmax_points(Var x, const std::vector<int>& counts) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() != 2) throw ShapeError("masked_softmax_points: expected (V,N)");
    const int v = tx.shape[0], n = tx.shape[1];
    if (static_cast<size_t>(v) != counts.size())
        throw ShapeError("masked_softmax_points: counts size mismatch");
    Tensor out = Tensor::zeros(tx.shape);
    for (int j = 0; j < v; ++j) {
        const int cnt = counts[static_cast<size_t>(j)];
        if (cnt == 0) continue;
        const double* row = &tx.data[static_cast<size_t>(j) * n];
        double* orow = &out.data[static_cast<size_t>(j) * n];
        double mx = row[0];
        for (int p = 1; p < cnt; ++p) mx = std::max(mx, row[p]);
        double z = 0.0;
        for (int p = 0; p < cnt; ++p) {
            orow[p] = std::exp(row[p] - mx);
            z += orow[p];
        }
        for (int p = 0; p < cnt; ++p) orow[p] /= z;
    }
    return make(std::move(out), [x, counts, v, n,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& y = g.val(Var{id});
        Tensor& gx = g.grad(x);
        for (int j = 0; j < v; ++j) {
            const int cnt = counts[static_cast<size_t>(j)];
            if (cnt == 0) continue;
            const size_t base = static_cast<size_t>(j) * n;
            double dot = 0.0;
            for (int p = 0; p < cnt; ++p) dot += go[base + p] * y[base + p];
            for (int p = 0; p < cnt; ++p)
                gx[base + p] += y[base + p] * (go[base + p] - dot);
        }
    });
}

Var Graph::mul_points_scalar(Var x, Var w) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.shape.rank() != 3 || tw.shape.rank() != 2 || tx.shape[1] != tw.shape[0] ||
        tx.shape[2] != tw.shape[1])
        throw ShapeError("mul_points_scalar: x " + tx.shape.str() + " vs w " +
                         tw.shape.str());
    const int c = tx.shape[0], v = tx.shape[1], n = tx.shape[2];
    Tensor out = tx;
    for (int i = 0; i < c; ++i)
        for (size_t j = 0; j < static_cast<size_t>(v) * n; ++j)
            out[static_cast<size_t>(i) * v * n + j] *= tw[j];
    return make(std::move(out), [x, w, c, v, n,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tw = g.val(w);
        Tensor& gx = g.grad(x);
        Tensor& gw = g.grad(w);
        const size_t vn = static_cast<size_t>(v) * n;
        for (int i = 0; i < c; ++i)
            for (size_t j = 0; j < vn; ++j) {
                const size_t p = static_cast<size_t>(i) * vn + j;
                gx[p] += go[p] * tw[j];
                gw[j] += go[p] * tx[p];
            }
    });
}

Var Graph::gather_points(Var x, const std::vector<std::pair<int, int>>& sel, int v2,
                         int k) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() != 3) throw ShapeError("gather_points: expected (C,V,N)");
    if (sel.size() != static_cast<size_t>(v2) * k)
        throw ShapeError("gather_points: selection size mismatch");
    const int c = tx.shape[0], v = tx.shape[1], n = tx.shape[2];
    Tensor out = Tensor::zeros(Shape{c, v2, k});
    for (int i = 0; i < c; ++i)
        for (size_t s = 0; s < sel.size(); ++s) {
            const auto [sv, sn] = sel[s];
            if (sv < 0) continue;
            out[static_cast<size_t>(i) * v2 * k + s] =
                tx[(static_cast<size_t>(i) * v + sv) * n + sn];
        }
    return make(std::move(out), [x, sel, c, v, n, v2, k,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (size_t s = 0; s < sel.size(); ++s) {
                const auto [sv, sn] = sel[s];
                if (sv < 0) continue;
                gx[(static_cast<size_t>(i) * v + sv) * n + sn] +=
                    go[static_cast<size_t>(i) * v2 * k + s];
            }
    });
}

Var Graph::conv2d(Var x, Var kernel, Var bias, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tk = val(kernel);
    const Tensor& tb = val(bias);
    if (tx.shape.rank() != 3 || tk.shape.rank() != 4)
        throw ShapeError("conv2d: x must be (C,H,W), kernel (Co,Ci,kh,kw)");
    const int ci = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    const int co = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
    if (tk.shape[1] != ci || tb.numel() != static_cast<size_t>(co))
        throw ShapeError("conv2d: kernel " + tk.shape.str() + " incompatible with x " +
                         tx.shape.str());
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");
    Tensor out = Tensor::zeros(Shape{co, oh, ow});
    // Process output channels in blocks of four so every loaded input value
    // feeds four accumulator rows that stay resident in L1.
    constexpr int BLK = 4;
    const auto lo_bound = [&](int k) {
        return k >= pad ? 0 : (pad - k + stride - 1) / stride;
    };
    const auto hi_bound = [&](int k, int extent, int n) {
        return std::min(n - 1, (extent - 1 + pad - k) / stride);
    };
    std::vector<double> acc(static_cast<size_t>(BLK) * ow);
    for (int ob = 0; ob < co; ob += BLK) {
        const int nb = std::min(BLK, co - ob);
        for (int y = 0; y < oh; ++y) {
            for (int b = 0; b < nb; ++b)
                std::fill(acc.begin() + static_cast<size_t>(b) * ow,
                          acc.begin() + static_cast<size_t>(b + 1) * ow,
                          tb[static_cast<size_t>(ob + b)]);
            for (int i = 0; i < ci; ++i) {
                const double* xp = &tx.data[static_cast<size_t>(i) * h * w];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = y * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* xrow = xp + static_cast<size_t>(iy) * w;
                    for (int kx = 0; kx < kw; ++kx) {
                        double kv[BLK];
                        for (int b = 0; b < nb; ++b)
                            kv[b] = tk[((static_cast<size_t>(ob + b) * ci + i) *
                                            kh + ky) * kw + kx];
                        const int x0 = lo_bound(kx), x1 = hi_bound(kx, w, ow);
                        if (nb == BLK) {
                            double* a0 = acc.data();
                            double* a1 = a0 + ow;
                            double* a2 = a1 + ow;
                            double* a3 = a2 + ow;
                            if (stride == 1) {
                                for (int xx = x0; xx <= x1; ++xx) {
                                    const double xv = xrow[xx - pad + kx];
                                    a0[xx] += kv[0] * xv;
                                    a1[xx] += kv[1] * xv;
                                    a2[xx] += kv[2] * xv;
                                    a3[xx] += kv[3] * xv;
                                }
                            } else {
                                for (int xx = x0; xx <= x1; ++xx) {
                                    const double xv =
                                        xrow[xx * stride - pad + kx];
                                    a0[xx] += kv[0] * xv;
                                    a1[xx] += kv[1] * xv;
                                    a2[xx] += kv[2] * xv;
                                    a3[xx] += kv[3] * xv;
                                }
                            }
                        } else {
                            for (int b = 0; b < nb; ++b) {
                                double* ab = acc.data() + static_cast<size_t>(b) * ow;
                                for (int xx = x0; xx <= x1; ++xx)
                                    ab[xx] += kv[b] * xrow[xx * stride - pad + kx];
                            }
                        }
                    }
                }
            }
            for (int b = 0; b < nb; ++b)
                std::copy(acc.begin() + static_cast<size_t>(b) * ow,
                          acc.begin() + static_cast<size_t>(b + 1) * ow,
                          &out.data[(static_cast<size_t>(ob + b) * oh + y) * ow]);
        }
    }
    return make(std::move(out), [x, kernel, bias, stride, pad, ci, h, w, co, kh, kw,
                                 oh, ow, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tk = g.val(kernel);
        Tensor& gx = g.grad(x);
        Tensor& gk = g.grad(kernel);
        Tensor& gb = g.grad(bias);
        for (int o = 0; o < co; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double gy = go[(static_cast<size_t>(o) * oh + y) * ow + xx];
                    if (gy == 0.0) continue;
                    gb[static_cast<size_t>(o)] += gy;
                    for (int i = 0; i < ci; ++i)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = y * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = xx * stride - pad + kx;
                                if (ix < 0 || ix >= w) continue;
                                const size_t kidx =
                                    ((static_cast<size_t>(o) * ci + i) * kh + ky) * kw + kx;
                                const size_t xidx =
                                    (static_cast<size_t>(i) * h + iy) * w + ix;
                                gk[kidx] += gy * tx[xidx];
                                gx[xidx] += gy * tk[kidx];
                            }
                        }
                }
    });
}

Var Graph::deconv2d(Var x, Var kernel, Var bias, int stride, int pad, int out_pad) {
    const Tensor& tx = val(x);
    const Tensor& tk = val(kernel);
    const Tensor& tb = val(bias);
    if (tx.shape.rank() != 3 || tk.shape.rank() != 4)
        throw ShapeError("deconv2d: x must be (C,H,W), kernel (Co,Ci,kh,kw)");
    const int ci = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    const int co = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
    if (tk.shape[1] != ci || tb.numel() != static_cast<size_t>(co))
        throw ShapeError("deconv2d: kernel incompatible with input");
    const int oh = (h - 1) * stride - 2 * pad + kh + out_pad;
    const int ow = (w - 1) * stride - 2 * pad + kw + out_pad;
    if (oh <= 0 || ow <= 0) throw ShapeError("deconv2d: empty output");
    Tensor out = Tensor::zeros(Shape{co, oh, ow});
    // Gather form per output row, with output channels in blocks of four:
    // each accumulator row stays in L1 and is written to the output once.
    constexpr int BLK = 4;
    const auto x_lo = [&](int k) {
        return k >= pad ? 0 : (pad - k + stride - 1) / stride;
    };
    const auto x_hi = [&](int k) {
        return std::min(w - 1, (ow - 1 + pad - k) / stride);
    };
    std::vector<double> acc(static_cast<size_t>(BLK) * ow);
    for (int ob = 0; ob < co; ob += BLK) {
        const int nb = std::min(BLK, co - ob);
        for (int oy = 0; oy < oh; ++oy) {
            for (int b = 0; b < nb; ++b)
                std::fill(acc.begin() + static_cast<size_t>(b) * ow,
                          acc.begin() + static_cast<size_t>(b + 1) * ow,
                          tb[static_cast<size_t>(ob + b)]);
            for (int i = 0; i < ci; ++i) {
                const double* xp = &tx.data[static_cast<size_t>(i) * h * w];
                for (int ky = 0; ky < kh; ++ky) {
                    const int ynum = oy + pad - ky;
                    if (ynum < 0 || ynum % stride != 0) continue;
                    const int y = ynum / stride;
                    if (y >= h) continue;
                    const double* xrow = xp + static_cast<size_t>(y) * w;
                    for (int kx = 0; kx < kw; ++kx) {
                        double kv[BLK];
                        for (int b = 0; b < nb; ++b)
                            kv[b] = tk[((static_cast<size_t>(ob + b) * ci + i) *
                                            kh + ky) * kw + kx];
                        const int x0 = x_lo(kx), x1 = x_hi(kx);
                        if (nb == BLK) {
                            double* a0 = acc.data();
                            double* a1 = a0 + ow;
                            double* a2 = a1 + ow;
                            double* a3 = a2 + ow;
                            for (int xx = x0; xx <= x1; ++xx) {
                                const int ox = xx * stride - pad + kx;
                                const double xv = xrow[xx];
                                a0[ox] += kv[0] * xv;
                                a1[ox] += kv[1] * xv;
                                a2[ox] += kv[2] * xv;
                                a3[ox] += kv[3] * xv;
                            }
                        } else {
                            for (int b = 0; b < nb; ++b) {
                                double* ab =
                                    acc.data() + static_cast<size_t>(b) * ow;
                                for (int xx = x0; xx <= x1; ++xx)
                                    ab[xx * stride - pad + kx] += kv[b] * xrow[xx];
                            }
                        }
                    }
                }
            }
            for (int b = 0; b < nb; ++b)
                std::copy(acc.begin() + static_cast<size_t>(b) * ow,
                          acc.begin() + static_cast<size_t>(b + 1) * ow,
                          &out.data[(static_cast<size_t>(ob + b) * oh + oy) * ow]);
        }
    }
    return make(std::move(out), [x, kernel, bias, stride, pad, ci, h, w, co, kh, kw,
                                 oh, ow, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tk = g.val(kernel);
        Tensor& gx = g.grad(x);
        Tensor& gk = g.grad(kernel);
        Tensor& gb = g.grad(bias);
        for (int o = 0; o < co; ++o) {
            double s = 0.0;
            for (size_t j = 0; j < static_cast<size_t>(oh) * ow; ++j)
                s += go[static_cast<size_t>(o) * oh * ow + j];
            gb[static_cast<size_t>(o)] += s;
        }
        for (int o = 0; o < co; ++o)
            for (int i = 0; i < ci; ++i)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const size_t xidx = (static_cast<size_t>(i) * h + y) * w + xx;
                        const double xv = tx[xidx];
                        double acc = 0.0;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int oy = y * stride - pad + ky;
                            if (oy < 0 || oy >= oh) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ox = xx * stride - pad + kx;
                                if (ox < 0 || ox >= ow) continue;
                                const size_t kidx =
                                    ((static_cast<size_t>(o) * ci + i) * kh + ky) * kw + kx;
                                const double gy =
                                    go[(static_cast<size_t>(o) * oh + oy) * ow + ox];
                                acc += tk[kidx] * gy;
                                gk[kidx] += gy * xv;
                            }
                        }
                        gx[xidx] += acc;
                    }
    });
}

Var Graph::nearest_upsample(Var x, int factor) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() != 3) throw ShapeError("nearest_upsample: expected (C,H,W)");
    const int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    const int oh = h * factor, ow = w * factor;
    Tensor out = Tensor::zeros(Shape{c, oh, ow});
    for (int i = 0; i < c; ++i)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out[(static_cast<size_t>(i) * oh + y) * ow + xx] =
                    tx[(static_cast<size_t>(i) * h + y / factor) * w + xx / factor];
    return make(std::move(out), [x, factor, c, h, w, oh, ow,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    gx[(static_cast<size_t>(i) * h + y / factor) * w + xx / factor] +=
                        go[(static_cast<size_t>(i) * oh + y) * ow + xx];
    });
}

Var Graph::mul_spatial_scalar(Var x, Var w) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.shape.rank() != 3 || tx.shape[1] * tx.shape[2] !=
                                    static_cast<int>(tw.numel()))
        throw ShapeError("mul_spatial_scalar: x " + tx.shape.str() + " vs w " +
                         tw.shape.str());
    const int c = tx.shape[0];
    const size_t hw = static_cast<size_t>(tx.shape[1]) * tx.shape[2];
    Tensor out = tx;
    for (int i = 0; i < c; ++i)
        for (size_t j = 0; j < hw; ++j) out[static_cast<size_t>(i) * hw + j] *= tw[j];
    return make(std::move(out), [x, w, c, hw, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        const Tensor& tx = g.val(x);
        const Tensor& tw = g.val(w);
        Tensor& gx = g.grad(x);
        Tensor& gw = g.grad(w);
        for (int i = 0; i < c; ++i)
            for (size_t j = 0; j < hw; ++j) {
                const size_t p = static_cast<size_t>(i) * hw + j;
                gx[p] += go[p] * tw[j];
                gw[j] += go[p] * tx[p];
            }
    });
}

Var Graph::interleave2(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "interleave2");
    if (ta.shape.rank() != 3) throw ShapeError("interleave2: expected (C,H,W)");
    const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    Tensor out = Tensor::zeros(Shape{c, 2 * h, 2 * w});
    for (int i = 0; i < c; ++i)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double av = ta[(static_cast<size_t>(i) * h + y) * w + xx];
                const double bv = tb[(static_cast<size_t>(i) * h + y) * w + xx];
                double* o = &out.data[(static_cast<size_t>(i) * 2 * h + 2 * y) * 2 * w +
                                      2 * xx];
                o[0] = av;          // even row, even col
                o[1] = av;          // even row, odd col (nearest from A)
                o[2 * w] = bv;      // odd row, even col (nearest from B)
                o[2 * w + 1] = bv;  // odd row, odd col
            }
    return make(std::move(out), [a, b, c, h, w, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& ga = g.grad(a);
        Tensor& gb = g.grad(b);
        for (int i = 0; i < c; ++i)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double* o =
                        &go.data[(static_cast<size_t>(i) * 2 * h + 2 * y) * 2 * w + 2 * xx];
                    ga[(static_cast<size_t>(i) * h + y) * w + xx] += o[0] + o[1];
                    gb[(static_cast<size_t>(i) * h + y) * w + xx] += o[2 * w] + o[2 * w + 1];
                }
    });
}

Var Graph::scatter_voxels(Var x, const std::vector<int>& iz, const std::vector<int>& iy,
                          const std::vector<int>& ix, int d, int h, int w) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() != 2) throw ShapeError("scatter_voxels: expected (C,V)");
    const int c = tx.shape[0], v = tx.shape[1];
    if (iz.size() != static_cast<size_t>(v) || iy.size() != iz.size() ||
        ix.size() != iz.size())
        throw ShapeError("scatter_voxels: coordinate list size mismatch");
    std::vector<char> occupied(static_cast<size_t>(d) * h * w, 0);
    std::vector<size_t> cell(static_cast<size_t>(v));
    for (int j = 0; j < v; ++j) {
        if (iz[j] < 0 || iz[j] >= d || iy[j] < 0 || iy[j] >= h || ix[j] < 0 ||
            ix[j] >= w)
            throw ShapeError("scatter_voxels: coordinate out of range");
        const size_t ci = (static_cast<size_t>(iz[j]) * h + iy[j]) * w + ix[j];
        if (occupied[ci]) throw ShapeError("scatter_voxels: duplicate voxel coordinate");
        occupied[ci] = 1;
        cell[static_cast<size_t>(j)] = ci;
    }
    const size_t dhw = static_cast<size_t>(d) * h * w;
    Tensor out = Tensor::zeros(Shape{c, d, h, w});
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < v; ++j)
            out[static_cast<size_t>(i) * dhw + cell[static_cast<size_t>(j)]] =
                tx[static_cast<size_t>(i) * v + j];
    return make(std::move(out), [x, cell, c, v, dhw,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < v; ++j)
                gx[static_cast<size_t>(i) * v + j] +=
                    go[static_cast<size_t>(i) * dhw + cell[static_cast<size_t>(j)]];
    });
}

Var Graph::concat_axis0(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_axis0: empty input list");
    const Tensor& t0 = val(xs[0]);
    Shape rest = t0.shape;
    int total = 0;
    size_t tail = t0.numel() / static_cast<size_t>(t0.shape[0]);
    for (Var v : xs) {
        const Tensor& t = val(v);
        if (t.shape.rank() != t0.shape.rank() ||
            t.numel() / static_cast<size_t>(t.shape[0]) != tail)
            throw ShapeError("concat_axis0: incompatible shapes " + t0.shape.str() +
                             " vs " + t.shape.str());
        total += t.shape[0];
    }
    rest.dims[0] = total;
    Tensor out = Tensor::zeros(rest);
    size_t off = 0;
    for (Var v : xs) {
        const Tensor& t = val(v);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<long>(off));
        off += t.numel();
    }
    return make(std::move(out), [xs, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        size_t off = 0;
        for (Var v : xs) {
            Tensor& gv = g.grad(v);
            for (size_t i = 0; i < gv.numel(); ++i) gv[i] += go[off + i];
            off += gv.numel();
        }
    });
}

Var Graph::slice_axis0(Var x, int start, int len) {
    const Tensor& tx = val(x);
    if (tx.shape.rank() < 1 || start < 0 || len <= 0 ||
        start + len > tx.shape[0])
        throw ShapeError("slice_axis0: bad range [" + std::to_string(start) +
                         ", +" + std::to_string(len) + ") for " + tx.shape.str());
    const size_t tail = tx.numel() / static_cast<size_t>(tx.shape[0]);
    Shape s = tx.shape;
    s.dims[0] = len;
    Tensor out = Tensor::zeros(s);
    std::copy(tx.data.begin() + static_cast<long>(start * tail),
              tx.data.begin() + static_cast<long>((start + len) * tail),
              out.data.begin());
    return make(std::move(out), [x, start, tail,
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        const size_t off = static_cast<size_t>(start) * tail;
        for (size_t i = 0; i < go.numel(); ++i) gx[off + i] += go[i];
    });
}

Var Graph::reshape(Var x, Shape s) {
    const Tensor& tx = val(x);
    if (s.numel() != tx.numel())
        throw ShapeError("reshape: numel mismatch " + tx.shape.str() + " -> " + s.str());
    Tensor out = tx;
    out.shape = std::move(s);
    return make(std::move(out), [x, id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        Tensor& gx = g.grad(x);
        for (size_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
    });
}

Var Graph::stack(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("stack: empty input list");
    const Tensor& t0 = val(xs[0]);
    for (Var v : xs) check_same_shape(val(v), t0, "stack");
    Shape s;
    s.dims.push_back(static_cast<int>(xs.size()));
    for (int d : t0.shape.dims) s.dims.push_back(d);
    Tensor out = Tensor::zeros(s);
    for (size_t k = 0; k < xs.size(); ++k) {
        const Tensor& t = val(xs[k]);
        std::copy(t.data.begin(), t.data.end(),
                  out.data.begin() + static_cast<long>(k * t0.numel()));
    }
    return make(std::move(out), [xs, n = t0.numel(),
                                 id = static_cast<int>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(Var{id});
        for (size_t k = 0; k < xs.size(); ++k) {
            Tensor& gv = g.grad(xs[k]);
            for (size_t i = 0; i < n; ++i) gv[i] += go[k * n + i];
        }
    });
}

Var Graph::smooth_l1_sum(Var pred, const Tensor& target, const Tensor& weight) {
    const Tensor& tp = val(pred);
    check_same_shape(tp, target, "smooth_l1_sum");
    check_same_shape(tp, weight, "smooth_l1_sum");
    double loss = 0.0;
    for (size_t i = 0; i < tp.numel(); ++i) {
        if (weight[i] == 0.0) continue;
        const double d = tp[i] - target[i];
        const double a = std::abs(d);
        loss += weight[i] * (a < 1.0 ? 0.5 * d * d : a - 0.5);
    }
    return make(Tensor::scalar(loss), [pred, target, weight,
                                       id = static_cast<int>(nodes_.size())](Graph& g) {
        const double go = g.grad(Var{id})[0];
        const Tensor& tp = g.val(pred);
        Tensor& gp = g.grad(pred);
        for (size_t i = 0; i < tp.numel(); ++i) {
            if (weight[i] == 0.0) continue;
            const double d = tp[i] - target[i];
            gp[i] += go * weight[i] * (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0));
        }
    });
}

namespace {
constexpr double kProbClamp = 1e-7;
}

Var Graph::sigmoid_focal_sum(Var logits, const Tensor& target, const Tensor& weight,
                             double alpha, double gamma) {
    const Tensor& tz = val(logits);
    check_same_shape(tz, target, "sigmoid_focal_sum");
    check_same_shape(tz, weight, "sigmoid_focal_sum");
    double loss = 0.0;
    for (size_t i = 0; i < tz.numel(); ++i) {
        if (weight[i] == 0.0) continue;
        const double p =
            std::clamp(1.0 / (1.0 + std::exp(-tz[i])), kProbClamp, 1.0 - kProbClamp);
        if (target[i] > 0.5) {
            loss += weight[i] * (-alpha * std::pow(1.0 - p, gamma) * std::log(p));
        } else {
            loss += weight[i] * (-(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p));
        }
    }
    return make(Tensor::scalar(loss), [logits, target, weight, alpha, gamma,
                                       id = static_cast<int>(nodes_.size())](Graph& g) {
        const double go = g.grad(Var{id})[0];
        const Tensor& tz = g.val(logits);
        Tensor& gz = g.grad(logits);
        for (size_t i = 0; i < tz.numel(); ++i) {
            if (weight[i] == 0.0) continue;
            const double p = std::clamp(1.0 / (1.0 + std::exp(-tz[i])), kProbClamp,
                                        1.0 - kProbClamp);
            double dldp;
            if (target[i] > 0.5) {
                dldp = alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
                       alpha * std::pow(1.0 - p, gamma) / p;
            } else {
                dldp = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) -
                                         std::pow(p, gamma) / (1.0 - p));
            }
            gz[i] += go * weight[i] * dldp * p * (1.0 - p);
        }
    });
}

Var Graph::sigmoid_bce_sum(Var logits, const Tensor& target, const Tensor& weight) {
    const Tensor& tz = val(logits);
    check_same_shape(tz, target, "sigmoid_bce_sum");
    check_same_shape(tz, weight, "sigmoid_bce_sum");
    double loss = 0.0;
    for (size_t i = 0; i < tz.numel(); ++i) {
        if (weight[i] == 0.0) continue;
        const double p =
            std::clamp(1.0 / (1.0 + std::exp(-tz[i])), kProbClamp, 1.0 - kProbClamp);
        loss += weight[i] *
                (-target[i] * std::log(p) - (1.0 - target[i]) * std::log(1.0 - p));
    }
    return make(Tensor::scalar(loss), [logits, target, weight,
                                       id = static_cast<int>(nodes_.size())](Graph& g) {
        const double go = g.grad(Var{id})[0];
        const Tensor& tz = g.val(logits);
        Tensor& gz = g.grad(logits);
        for (size_t i = 0; i < tz.numel(); ++i) {
            if (weight[i] == 0.0) continue;
            const double p = 1.0 / (1.0 + std::exp(-tz[i]));
            gz[i] += go * weight[i] * (p - target[i]);
        }
    });
}

double grad_check(const std::function<Var(Graph&)>& build, ParamStore& params,
                  const std::vector<std::string>& param_names, double eps) {
    params.zero_grad();
    {
        Graph g;
        Var loss = build(g);
        g.backward(loss);
    }
    double max_rel = 0.0;
    for (const auto& name : param_names) {
        Parameter& p = params.at(name);
        const Tensor analytic = p.grad;
        for (size_t i = 0; i < p.value.numel(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + eps;
            double fp, fm;
            {
                Graph g;
                fp = g.val(build(g))[0];
            }
            p.value[i] = orig - eps;
            {
                Graph g;
                fm = g.val(build(g))[0];
            }
            p.value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double rel =
                std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace pvd
