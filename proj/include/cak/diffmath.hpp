#pragma once

// Small reverse-mode autodiff over dense double tensors.
//
// Every backward rule is written in terms of the same differentiable ops, so
// calling grad(..., create_graph=true) yields gradients that are themselves
// graph values and can be differentiated again (double backprop, as needed
// by a gradient penalty). Graphs are built fresh for each evaluation; no node
// stores gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cak::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() : data(1, 0.0) {}
    Tensor(Shape s, std::vector<double> d);
    explicit Tensor(Shape s, double fill = 0.0);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    std::size_t size() const noexcept { return data.size(); }
    double item() const;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

class Var;

/// Receives the op inputs and the incoming gradient; returns one gradient per
/// input (a default-constructed Var where an input gets none).
using BackwardFn = std::function<std::vector<Var>(std::span<const Var> inputs, const Var& grad_out)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    const char* op = "leaf";
    bool second_order = true;
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    double item() const { return node_->value.item(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const Node* node() const noexcept { return node_.get(); }

private:
    friend Var make_op(const char*, Tensor, std::vector<Var>, BackwardFn, bool);
    friend std::vector<Var> grad(const Var&, std::span<const Var>, bool);
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);
Var detach(const Var& v);

/// Records an op node when gradient mode is on and any input requires grad.
/// Throws NonFinite when the value contains NaN or Inf.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward,
            bool second_order = true);

/// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

/// Gradients of a single-element output w.r.t. each of `wrt`. With
/// create_graph the returned gradients carry their own graph; an op without a
/// differentiable backward then raises UnsupportedSecondOrder.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);  ///< subgradient 0 at 0
Var log(const Var& a);
Var sqrt(const Var& a);
Var leaky_relu(const Var& a, double slope);

// With constants.
Var add_const(const Var& a, double k);
Var mul_const(const Var& a, double k);
/// a * s for a single-element s, broadcast over a.
Var scale(const Var& a, const Var& s);

// Reductions and broadcasts.
Var sum(const Var& a);  ///< shape {}
Var mean(const Var& a);
Var l1_norm(const Var& a);
Var l2_norm(const Var& a);  ///< gradient 0 at the origin
Var broadcast(const Var& s, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);

// Channel-first images {C, H, W}.
/// 3x3 kernel w {O, C, 3, 3}, zero padding 1, given stride.
Var conv2d(const Var& x, const Var& w, std::size_t stride);
/// Transpose of conv2d w.r.t. its input: maps {O, Ho, Wo} back to input_shape.
Var conv2d_grad_input(const Var& g, const Var& w, const Shape& input_shape, std::size_t stride);
/// Transpose of conv2d w.r.t. its kernel.
Var conv2d_grad_weight(const Var& x, const Var& g, const Shape& weight_shape, std::size_t stride);
Var channel_sum(const Var& x);                          ///< {C,H,W} -> {C}
Var channel_broadcast(const Var& v, const Shape& shape); ///< {C} -> {C,H,W}
Var add_channel_bias(const Var& x, const Var& b);
Var global_mean_pool(const Var& x);                     ///< {C,H,W} -> {C}

// Dense layers.
Var matvec(const Var& w, const Var& x);    ///< {M,N} x {N} -> {M}
Var matvec_t(const Var& w, const Var& y);  ///< {M,N}^T x {M} -> {N}
Var outer(const Var& a, const Var& b);     ///< {M} x {N} -> {M,N}
Var affine(const Var& w, const Var& b, const Var& x);

// Concatenation along the leading axis.
Var concat(const Var& a, const Var& b);
Var slice(const Var& a, std::size_t start, std::size_t count);
Var pad(const Var& a, std::size_t start, const Shape& full_shape);

/// Op with a caller-supplied first-order vector-Jacobian product. Cannot be
/// differentiated twice.
Var custom_op(const char* name, const Var& x, Tensor value,
              std::function<Tensor(const Tensor& x, const Tensor& grad_out)> vjp);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState for_params(std::span<const Tensor* const> params, AdamConfig config);
};

/// Bias-corrected Adam update applied in place.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

} // namespace cak::ad
