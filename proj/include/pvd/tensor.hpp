#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <random>
#include <string>
#include <vector>

namespace pvd {

struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) {}
    explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

    int rank() const { return static_cast<int>(dims.size()); }
    int operator[](int i) const { return dims[static_cast<size_t>(i)]; }
    size_t numel() const {
        size_t n = 1;
        for (int d : dims) n *= static_cast<size_t>(d);
        return n;
    }
    bool operator==(const Shape& o) const { return dims == o.dims; }
    std::string str() const;
};

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from(Shape s, std::vector<double> d);

    size_t numel() const { return data.size(); }
    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }
    bool empty() const { return data.empty(); }
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

class ParamStore {
  public:
    // Creates or returns an existing parameter of the given shape.
    Parameter& create(const std::string& name, Shape shape,
                      const std::function<void(Tensor&)>& init);
    Parameter& uniform(const std::string& name, Shape shape, std::mt19937_64& rng);
    Parameter& zeros(const std::string& name, Shape shape);
    Parameter& ones(const std::string& name, Shape shape);

    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    void zero_grad();
    std::vector<std::string> names() const;  // sorted

    void save(const std::string& path_prefix) const;  // .manifest + .bin
    void load(const std::string& path_prefix);

  private:
    std::map<std::string, Parameter> params_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Values are computed eagerly; backward() walks the tape in
// reverse creation order and accumulates parameter gradients into the store.
class Graph {
  public:
    Var constant(Tensor t);
    Var param(Parameter& p);

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    Tensor& grad(Var v);

    // --- elementwise / reductions ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var sum(Var a);  // -> scalar
    Var gelu(Var x);
    Var sigmoid(Var x);

    // --- channel-first dense layers: x is (C_in, ...) flattened over the rest ---
    Var linear(Var x, Var weight, Var bias);  // weight (C_out, C_in), bias (C_out)
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var softmax_axis0(Var x);

    // --- point-set ops on (C, V, N) tensors with per-voxel real counts ---
    Var masked_max_points(Var x, const std::vector<int>& counts);  // -> (C, V)
    Var broadcast_points(Var x, const std::vector<int>& counts, int n);  // (C,V)->(C,V,N)
    Var mask_points(Var x, const std::vector<int>& counts);
    Var masked_softmax_points(Var x, const std::vector<int>& counts);  // x (V, N)
    Var mul_points_scalar(Var x, Var w);  // (C,V,N) * (V,N)
    // Gather selected (voxel, point) pairs into (C, V2, K); sel < 0 pads zero.
    Var gather_points(Var x, const std::vector<std::pair<int, int>>& sel, int v2, int k);

    // --- spatial ops on (C, H, W) tensors ---
    Var conv2d(Var x, Var kernel, Var bias, int stride, int pad);
    Var deconv2d(Var x, Var kernel, Var bias, int stride, int pad, int out_pad);
    Var nearest_upsample(Var x, int factor);
    Var mul_spatial_scalar(Var x, Var w);  // (C,H,W) * (H,W)
    // Checkerboard interleave of two equally shaped maps into (C, 2H, 2W).
    Var interleave2(Var a, Var b);
    // Scatter per-voxel columns (C, V) into a dense (C*D, H, W) map.
    Var scatter_voxels(Var x, const std::vector<int>& iz, const std::vector<int>& iy,
                       const std::vector<int>& ix, int d, int h, int w);

    Var concat_axis0(const std::vector<Var>& xs);
    Var slice_axis0(Var x, int start, int len);
    Var reshape(Var x, Shape s);
    Var stack(const std::vector<Var>& xs);  // k tensors -> (k, ...)

    // --- losses (scalar outputs; weight and target are constants) ---
    Var smooth_l1_sum(Var pred, const Tensor& target, const Tensor& weight);
    Var sigmoid_focal_sum(Var logits, const Tensor& target, const Tensor& weight,
                          double alpha, double gamma);
    Var sigmoid_bce_sum(Var logits, const Tensor& target, const Tensor& weight);

    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily
        std::function<void(Graph&)> back;
        Parameter* param = nullptr;
    };

    Var make(Tensor value, std::function<void(Graph&)> back);
    std::vector<Node> nodes_;
};

// Max relative error between analytic gradients and central finite differences.
// build must construct a fresh graph over the given parameters and return the
// scalar loss node.
double grad_check(const std::function<Var(Graph&)>& build, ParamStore& params,
                  const std::vector<std::string>& param_names, double eps = 1e-5);

}  // namespace pvd
