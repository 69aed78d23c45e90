#include "cak/diffmath.hpp"

#include "cak/error.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace cak::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.shape() != b.shape())
        throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": shapes " + shape_string(a.shape()) +
                                                  " and " + shape_string(b.shape()) + " differ");
}

void require_rank(const Var& a, std::size_t rank, const char* op)
{
    if (a.shape().size() != rank)
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

template <class F>
Tensor map_unary(const Tensor& a, F f)
{
    Tensor out(a.shape, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f)
{
    Tensor out(a.shape, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

std::size_t conv_out_extent(std::size_t n, std::size_t stride) { return (n - 1) / stride + 1; }

// Index helpers for the 3x3, padding-1 convolution family. All three kernels
// visit (o, c, ki, kj, i, j) and touch x[c, i*s+ki-1, j*s+kj-1].
struct ConvDims {
    std::size_t out_ch, in_ch, h, w, ho, wo, stride;
};

ConvDims conv_dims(const Shape& x_shape, const Shape& w_shape, std::size_t stride)
{
    const std::size_t h = x_shape[1];
    const std::size_t w = x_shape[2];
    return ConvDims{w_shape[0], w_shape[1], h, w, conv_out_extent(h, stride), conv_out_extent(w, stride), stride};
}

void check_conv_shapes(const Shape& x_shape, const Shape& w_shape, const char* op)
{
    if (x_shape.size() != 3 || w_shape.size() != 4 || w_shape[2] != 3 || w_shape[3] != 3 ||
        w_shape[1] != x_shape[0] || x_shape[1] == 0 || x_shape[2] == 0)
        throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": incompatible input " + shape_string(x_shape) +
                                                  " and kernel " + shape_string(w_shape));
}

Tensor conv_forward(const Tensor& x, const Tensor& w, std::size_t stride)
{
    const ConvDims d = conv_dims(x.shape, w.shape, stride);
    Tensor y(Shape{d.out_ch, d.ho, d.wo}, 0.0);
    for (std::size_t o = 0; o < d.out_ch; ++o) {
        double* yo = y.data.data() + o * d.ho * d.wo;
        for (std::size_t c = 0; c < d.in_ch; ++c) {
            const double* xc = x.data.data() + c * d.h * d.w;
            const double* wk = w.data.data() + (o * d.in_ch + c) * 9;
            for (std::size_t ki = 0; ki < 3; ++ki) {
                for (std::size_t kj = 0; kj < 3; ++kj) {
                    const double k = wk[ki * 3 + kj];
                    if (k == 0.0) continue;
                    for (std::size_t i = 0; i < d.ho; ++i) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + ki) - 1;
                        if (r < 0 || r >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        const double* xrow = xc + static_cast<std::size_t>(r) * d.w;
                        double* yrow = yo + i * d.wo;
                        for (std::size_t j = 0; j < d.wo; ++j) {
                            const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * stride + kj) - 1;
                            if (col < 0 || col >= static_cast<std::ptrdiff_t>(d.w)) continue;
                            yrow[j] += k * xrow[col];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor conv_input_transpose(const Tensor& g, const Tensor& w, const Shape& x_shape, std::size_t stride)
{
    const ConvDims d = conv_dims(x_shape, w.shape, stride);
    Tensor x(x_shape, 0.0);
    for (std::size_t o = 0; o < d.out_ch; ++o) {
        const double* go = g.data.data() + o * d.ho * d.wo;
        for (std::size_t c = 0; c < d.in_ch; ++c) {
            double* xc = x.data.data() + c * d.h * d.w;
            const double* wk = w.data.data() + (o * d.in_ch + c) * 9;
            for (std::size_t ki = 0; ki < 3; ++ki) {
                for (std::size_t kj = 0; kj < 3; ++kj) {
                    const double k = wk[ki * 3 + kj];
                    if (k == 0.0) continue;
                    for (std::size_t i = 0; i < d.ho; ++i) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + ki) - 1;
                        if (r < 0 || r >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        double* xrow = xc + static_cast<std::size_t>(r) * d.w;
                        const double* grow = go + i * d.wo;
                        for (std::size_t j = 0; j < d.wo; ++j) {
                            const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * stride + kj) - 1;
                            if (col < 0 || col >= static_cast<std::ptrdiff_t>(d.w)) continue;
                            xrow[col] += k * grow[j];
                        }
                    }
                }
            }
        }
    }
    return x;
}

Tensor conv_weight_transpose(const Tensor& x, const Tensor& g, const Shape& w_shape, std::size_t stride)
{
    const ConvDims d = conv_dims(x.shape, w_shape, stride);
    Tensor w(w_shape, 0.0);
    for (std::size_t o = 0; o < d.out_ch; ++o) {
        const double* go = g.data.data() + o * d.ho * d.wo;
        for (std::size_t c = 0; c < d.in_ch; ++c) {
            const double* xc = x.data.data() + c * d.h * d.w;
            double* wk = w.data.data() + (o * d.in_ch + c) * 9;
            for (std::size_t ki = 0; ki < 3; ++ki) {
                for (std::size_t kj = 0; kj < 3; ++kj) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d.ho; ++i) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + ki) - 1;
                        if (r < 0 || r >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        const double* xrow = xc + static_cast<std::size_t>(r) * d.w;
                        const double* grow = go + i * d.wo;
                        for (std::size_t j = 0; j < d.wo; ++j) {
                            const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * stride + kj) - 1;
                            if (col < 0 || col >= static_cast<std::ptrdiff_t>(d.w)) continue;
                            acc += grow[j] * xrow[col];
                        }
                    }
                    wk[ki * 3 + kj] = acc;
                }
            }
        }
    }
    return w;
}

} // namespace

// ---------------------------------------------------------------- tensors

std::size_t numel(const Shape& shape) noexcept
{
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::string s = "{";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "}";
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d))
{
    if (data.size() != numel(shape))
        throw Error(ErrorCode::ShapeMismatch,
                    "tensor data has " + std::to_string(data.size()) + " values for shape " + shape_string(shape));
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

double Tensor::item() const
{
    if (data.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_string(shape));
    return data[0];
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- graph

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    if (!value.all_finite()) throw Error(ErrorCode::NonFinite, "non-finite value in leaf tensor");
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var parameter(Tensor value) { return Var(std::move(value), true); }
Var detach(const Var& v) { return Var(v.value(), false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward, bool second_order)
{
    if (!value.all_finite()) throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite value");
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    out.node_->op = op;
    const bool track =
        g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (track) {
        out.node_->requires_grad = true;
        out.node_->inputs = std::move(inputs);
        out.node_->backward = std::move(backward);
        out.node_->second_order = second_order;
    }
    return out;
}

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph)
{
    if (!output.defined()) throw Error(ErrorCode::InvalidArgument, "grad of an undefined value");
    if (output.value().size() != 1)
        throw Error(ErrorCode::ShapeMismatch, "grad requires a single-element output, got " +
                                                  shape_string(output.shape()));

    // Reverse topological order by iterative post-order DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    if (output.requires_grad()) {
        std::vector<std::pair<Node*, std::size_t>> stack{{output.node_.get(), 0}};
        visited.insert(output.node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* child = node->inputs[next++].node_.get();
                if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<Node*, Var> grads;
    grads.emplace(output.node_.get(), constant(Tensor(output.shape(), 1.0)));

    {
        std::optional<NoGradGuard> guard;
        if (!create_graph) guard.emplace();
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            auto found = grads.find(node);
            if (found == grads.end() || !node->backward) continue;
            if (create_graph && !node->second_order)
                throw Error(ErrorCode::UnsupportedSecondOrder,
                            std::string(node->op) + " has no differentiable backward rule");
            const Var g = found->second;
            std::vector<Var> input_grads = node->backward(node->inputs, g);
            for (std::size_t i = 0; i < node->inputs.size() && i < input_grads.size(); ++i) {
                const Var& in = node->inputs[i];
                if (!in.requires_grad() || !input_grads[i].defined()) continue;
                Node* key = in.node_.get();
                auto slot = grads.find(key);
                if (slot == grads.end())
                    grads.emplace(key, std::move(input_grads[i]));
                else
                    slot->second = add(slot->second, input_grads[i]);
            }
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        auto found = w.defined() ? grads.find(w.node_.get()) : grads.end();
        if (found != grads.end()) {
            result.push_back(create_graph ? found->second : detach(found->second));
        } else {
            result.push_back(constant(Tensor(w.shape(), 0.0)));
        }
    }
    return result;
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b)
{
    require_same_shape(a, b, "add");
    return make_op("add", map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                   [](std::span<const Var>, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a, b, "sub");
    return make_op("sub", map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                   [](std::span<const Var>, const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a, b, "mul");
    return make_op("mul", map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                   [](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{mul(g, in[1]), mul(g, in[0])};
                   });
}

Var div(const Var& a, const Var& b)
{
    require_same_shape(a, b, "div");
    return make_op("div", map_binary(a.value(), b.value(), [](double x, double y) { return x / y; }), {a, b},
                   [](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{div(g, in[1]), neg(div(mul(g, in[0]), mul(in[1], in[1])))};
                   });
}

Var neg(const Var& a) { return mul_const(a, -1.0); }

Var square(const Var& a) { return mul(a, a); }

Var sigmoid(const Var& a)
{
    return make_op("sigmoid", map_unary(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a},
                   [](std::span<const Var> in, const Var& g) {
                       const Var s = sigmoid(in[0]);
                       return std::vector<Var>{mul(g, mul(s, add_const(neg(s), 1.0)))};
                   });
}

Var abs(const Var& a)
{
    return make_op("abs", map_unary(a.value(), [](double x) { return std::fabs(x); }), {a},
                   [](std::span<const Var> in, const Var& g) {
                       const Var sign = constant(map_unary(
                           in[0].value(), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }));
                       return std::vector<Var>{mul(g, sign)};
                   });
}

Var log(const Var& a)
{
    return make_op("log", map_unary(a.value(), [](double x) { return std::log(x); }), {a},
                   [](std::span<const Var> in, const Var& g) { return std::vector<Var>{div(g, in[0])}; });
}

Var sqrt(const Var& a)
{
    return make_op("sqrt", map_unary(a.value(), [](double x) { return std::sqrt(x); }), {a},
                   [](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{div(mul_const(g, 0.5), sqrt(in[0]))};
                   });
}

Var leaky_relu(const Var& a, double slope)
{
    return make_op("leaky_relu", map_unary(a.value(), [slope](double x) { return x > 0.0 ? x : slope * x; }), {a},
                   [slope](std::span<const Var> in, const Var& g) {
                       const Var mask =
                           constant(map_unary(in[0].value(), [slope](double x) { return x > 0.0 ? 1.0 : slope; }));
                       return std::vector<Var>{mul(g, mask)};
                   });
}

Var add_const(const Var& a, double k)
{
    return make_op("add_const", map_unary(a.value(), [k](double x) { return x + k; }), {a},
                   [](std::span<const Var>, const Var& g) { return std::vector<Var>{g}; });
}

Var mul_const(const Var& a, double k)
{
    return make_op("mul_const", map_unary(a.value(), [k](double x) { return x * k; }), {a},
                   [k](std::span<const Var>, const Var& g) { return std::vector<Var>{mul_const(g, k)}; });
}

Var scale(const Var& a, const Var& s)
{
    if (s.value().size() != 1)
        throw Error(ErrorCode::ShapeMismatch, "scale: factor must be a single element, got " + shape_string(s.shape()));
    const double k = s.value().data[0];
    return make_op("scale", map_unary(a.value(), [k](double x) { return x * k; }), {a, s},
                   [](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{scale(g, in[1]), reshape(sum(mul(g, in[0])), in[1].shape())};
                   });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a)
{
    double acc = 0.0;
    for (double v : a.value().data) acc += v;
    return make_op("sum", Tensor::scalar(acc), {a}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{broadcast(g, in[0].shape())};
    });
}

Var mean(const Var& a) { return mul_const(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var l1_norm(const Var& a) { return sum(abs(a)); }

Var l2_norm(const Var& a)
{
    double acc = 0.0;
    for (double v : a.value().data) acc += v * v;
    return make_op("l2_norm", Tensor::scalar(std::sqrt(acc)), {a}, [](std::span<const Var> in, const Var& g) {
        const Var norm = l2_norm(in[0]);
        if (norm.item() == 0.0) return std::vector<Var>{constant(Tensor(in[0].shape(), 0.0))};
        return std::vector<Var>{scale(in[0], div(reshape(g, Shape{}), norm))};
    });
}

Var broadcast(const Var& s, const Shape& shape)
{
    if (s.value().size() != 1)
        throw Error(ErrorCode::ShapeMismatch, "broadcast: source must be a single element");
    return make_op("broadcast", Tensor(shape, s.value().data[0]), {s}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{reshape(sum(g), in[0].shape())};
    });
}

Var reshape(const Var& a, const Shape& shape)
{
    if (numel(shape) != a.value().size())
        throw Error(ErrorCode::ShapeMismatch,
                    "reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
    if (shape == a.shape()) return a;
    return make_op("reshape", Tensor(shape, a.value().data), {a}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{reshape(g, in[0].shape())};
    });
}

// ---------------------------------------------------------------- convolution

Var conv2d(const Var& x, const Var& w, std::size_t stride)
{
    check_conv_shapes(x.shape(), w.shape(), "conv2d");
    if (stride == 0) throw Error(ErrorCode::InvalidArgument, "conv2d: stride must be positive");
    return make_op("conv2d", conv_forward(x.value(), w.value(), stride), {x, w},
                   [stride](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{conv2d_grad_input(g, in[1], in[0].shape(), stride),
                                               conv2d_grad_weight(in[0], g, in[1].shape(), stride)};
                   });
}

Var conv2d_grad_input(const Var& g, const Var& w, const Shape& input_shape, std::size_t stride)
{
    check_conv_shapes(input_shape, w.shape(), "conv2d_grad_input");
    const Shape expect{w.shape()[0], conv_out_extent(input_shape[1], stride), conv_out_extent(input_shape[2], stride)};
    if (g.shape() != expect)
        throw Error(ErrorCode::ShapeMismatch, "conv2d_grad_input: gradient shape " + shape_string(g.shape()));
    return make_op("conv2d_grad_input", conv_input_transpose(g.value(), w.value(), input_shape, stride), {g, w},
                   [stride](std::span<const Var> in, const Var& gz) {
                       return std::vector<Var>{conv2d(gz, in[1], stride),
                                               conv2d_grad_weight(gz, in[0], in[1].shape(), stride)};
                   });
}

Var conv2d_grad_weight(const Var& x, const Var& g, const Shape& weight_shape, std::size_t stride)
{
    check_conv_shapes(x.shape(), weight_shape, "conv2d_grad_weight");
    const Shape expect{weight_shape[0], conv_out_extent(x.shape()[1], stride), conv_out_extent(x.shape()[2], stride)};
    if (g.shape() != expect)
        throw Error(ErrorCode::ShapeMismatch, "conv2d_grad_weight: gradient shape " + shape_string(g.shape()));
    return make_op("conv2d_grad_weight", conv_weight_transpose(x.value(), g.value(), weight_shape, stride), {x, g},
                   [stride](std::span<const Var> in, const Var& gz) {
                       return std::vector<Var>{conv2d_grad_input(in[1], gz, in[0].shape(), stride),
                                               conv2d(in[0], gz, stride)};
                   });
}

Var channel_sum(const Var& x)
{
    require_rank(x, 3, "channel_sum");
    const auto& s = x.shape();
    const std::size_t plane = s[1] * s[2];
    Tensor out(Shape{s[0]}, 0.0);
    for (std::size_t c = 0; c < s[0]; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += x.value().data[c * plane + i];
        out.data[c] = acc;
    }
    return make_op("channel_sum", std::move(out), {x}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{channel_broadcast(g, in[0].shape())};
    });
}

Var channel_broadcast(const Var& v, const Shape& shape)
{
    require_rank(v, 1, "channel_broadcast");
    if (shape.size() != 3 || shape[0] != v.shape()[0])
        throw Error(ErrorCode::ShapeMismatch, "channel_broadcast: target " + shape_string(shape));
    const std::size_t plane = shape[1] * shape[2];
    Tensor out(shape, 0.0);
    for (std::size_t c = 0; c < shape[0]; ++c)
        std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, v.value().data[c]);
    return make_op("channel_broadcast", std::move(out), {v},
                   [](std::span<const Var>, const Var& g) { return std::vector<Var>{channel_sum(g)}; });
}

Var add_channel_bias(const Var& x, const Var& b) { return add(x, channel_broadcast(b, x.shape())); }

Var global_mean_pool(const Var& x)
{
    require_rank(x, 3, "global_mean_pool");
    return mul_const(channel_sum(x), 1.0 / static_cast<double>(x.shape()[1] * x.shape()[2]));
}

// ---------------------------------------------------------------- dense

Var matvec(const Var& w, const Var& x)
{
    require_rank(w, 2, "matvec");
    require_rank(x, 1, "matvec");
    const std::size_t m = w.shape()[0], n = w.shape()[1];
    if (x.shape()[0] != n) throw Error(ErrorCode::ShapeMismatch, "matvec: inner dimensions differ");
    Tensor y(Shape{m}, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += w.value().data[i * n + j] * x.value().data[j];
        y.data[i] = acc;
    }
    return make_op("matvec", std::move(y), {w, x}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{outer(g, in[1]), matvec_t(in[0], g)};
    });
}

Var matvec_t(const Var& w, const Var& y)
{
    require_rank(w, 2, "matvec_t");
    require_rank(y, 1, "matvec_t");
    const std::size_t m = w.shape()[0], n = w.shape()[1];
    if (y.shape()[0] != m) throw Error(ErrorCode::ShapeMismatch, "matvec_t: inner dimensions differ");
    Tensor x(Shape{n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) x.data[j] += w.value().data[i * n + j] * y.value().data[i];
    return make_op("matvec_t", std::move(x), {w, y}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{outer(in[1], g), matvec(in[0], g)};
    });
}

Var outer(const Var& a, const Var& b)
{
    require_rank(a, 1, "outer");
    require_rank(b, 1, "outer");
    const std::size_t m = a.shape()[0], n = b.shape()[0];
    Tensor z(Shape{m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) z.data[i * n + j] = a.value().data[i] * b.value().data[j];
    return make_op("outer", std::move(z), {a, b}, [](std::span<const Var> in, const Var& g) {
        return std::vector<Var>{matvec(g, in[1]), matvec_t(g, in[0])};
    });
}

Var affine(const Var& w, const Var& b, const Var& x) { return add(matvec(w, x), b); }

// ---------------------------------------------------------------- concat

namespace {

Shape with_leading(const Shape& s, std::size_t lead)
{
    Shape out = s;
    out[0] = lead;
    return out;
}

} // namespace

Var concat(const Var& a, const Var& b)
{
    if (a.shape().empty() || b.shape().empty() ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1, b.shape().end()))
        throw Error(ErrorCode::ShapeMismatch,
                    "concat: " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " are incompatible");
    std::vector<double> data = a.value().data;
    data.insert(data.end(), b.value().data.begin(), b.value().data.end());
    const std::size_t na = a.shape()[0];
    const std::size_t nb = b.shape()[0];
    return make_op("concat", Tensor(with_leading(a.shape(), na + nb), std::move(data)), {a, b},
                   [na, nb](std::span<const Var>, const Var& g) {
                       return std::vector<Var>{slice(g, 0, na), slice(g, na, nb)};
                   });
}

Var slice(const Var& a, std::size_t start, std::size_t count)
{
    if (a.shape().empty() || start + count > a.shape()[0])
        throw Error(ErrorCode::ShapeMismatch, "slice: range exceeds " + shape_string(a.shape()));
    const std::size_t inner = a.value().size() / a.shape()[0];
    const auto first = a.value().data.begin() + static_cast<std::ptrdiff_t>(start * inner);
    std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(count * inner));
    return make_op("slice", Tensor(with_leading(a.shape(), count), std::move(data)), {a},
                   [start](std::span<const Var> in, const Var& g) {
                       return std::vector<Var>{pad(g, start, in[0].shape())};
                   });
}

Var pad(const Var& a, std::size_t start, const Shape& full_shape)
{
    if (a.shape().empty() || full_shape.size() != a.shape().size() || start + a.shape()[0] > full_shape[0] ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), full_shape.begin() + 1))
        throw Error(ErrorCode::ShapeMismatch, "pad: " + shape_string(a.shape()) + " into " + shape_string(full_shape));
    const std::size_t inner = a.value().size() / a.shape()[0];
    Tensor out(full_shape, 0.0);
    std::copy(a.value().data.begin(), a.value().data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * inner));
    const std::size_t count = a.shape()[0];
    return make_op("pad", std::move(out), {a}, [start, count](std::span<const Var>, const Var& g) {
        return std::vector<Var>{slice(g, start, count)};
    });
}

Var custom_op(const char* name, const Var& x, Tensor value,
              std::function<Tensor(const Tensor& x, const Tensor& grad_out)> vjp)
{
    return make_op(
        name, std::move(value), {x},
        [vjp = std::move(vjp)](std::span<const Var> in, const Var& g) {
            return std::vector<Var>{constant(vjp(in[0].value(), g.value()))};
        },
        false);
}

// ---------------------------------------------------------------- adam

AdamState AdamState::for_params(std::span<const Tensor* const> params, AdamConfig config)
{
    AdamState state;
    state.config = config;
    for (const Tensor* p : params) {
        state.m.emplace_back(p->shape, 0.0);
        state.v.emplace_back(p->shape, 0.0);
    }
    return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state)
{
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter, gradient and moment counts differ");
    for (std::size_t k = 0; k < params.size(); ++k)
        if (params[k]->shape != grads[k].shape || params[k]->shape != state.m[k].shape)
            throw Error(ErrorCode::ShapeMismatch, "adam_step: shape mismatch for parameter " + std::to_string(k));

    const AdamConfig& cfg = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(cfg.beta1, t);
    const double correct2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k]->data;
        auto& m = state.m[k].data;
        auto& v = state.v[k].data;
        const auto& g = grads[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correct1;
            const double v_hat = v[i] / correct2;
            p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

} // namespace cak::ad
