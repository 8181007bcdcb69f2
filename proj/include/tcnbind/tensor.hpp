#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; backward()
// topologically orders the reachable nodes into a GradientTape, replays it
// once and then releases the interior of the graph. Kernels accumulate in
// double and store results in the tensor's element type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tcnbind/random.hpp"

namespace tcnbind {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return inputs.empty() && !backward; }

    std::vector<T>& grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), T(0));
        }
        return grad;
    }

    template <typename U>
    void accumulate(std::span<const U> g) {
        auto& dst = grad_buffer();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = static_cast<T>(static_cast<double>(dst[i]) + static_cast<double>(g[i]));
        }
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor create(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (shape.empty()) {
            throw ShapeError("tensor shape must have at least one axis");
        }
        for (auto e : shape) {
            if (e == 0) {
                throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
            }
        }
        if (numel(shape) != values.size()) {
            throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                             " elements but " + std::to_string(values.size()) + " values were given");
        }
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return create(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        const auto n = numel(shape);
        return create(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return create({1}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

    std::span<const T> values() const { return node_->value; }
    /// Direct write access; only meaningful for leaves (parameters, inputs).
    std::span<T> mutable_values() { return node_->value; }

    T item() const {
        if (size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        }
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf(); }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    const char* op_name() const { return node_->op; }

    /// Fresh leaf sharing no graph history with this tensor.
    Tensor detach(bool requires_grad = false) const {
        return create(shape(), node_->value, requires_grad);
    }

    const NodePtr& node() const { return node_; }
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

private:
    NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

/// Builds an op result. The backward closure is attached only when some input
/// needs a gradient, so inference never keeps a graph alive.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<std::shared_ptr<Node<T>>> inputs, std::function<void(Node<T>&)> backward) {
    auto out = Tensor<T>::create(std::move(shape), std::move(values));
    const bool needs = grad_mode() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const auto& n) { return n->requires_grad; });
    auto& node = *out.node();
    node.op = op;
    if (needs) {
        node.requires_grad = true;
        node.inputs = std::move(inputs);
        node.backward = std::move(backward);
    }
    return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    }
}

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Extends tcnbind with new differentiable primitives. `backward` receives the
/// output node with its grad populated and must push gradients into inputs.
template <typename T>
Tensor<T> custom_op(const char* op, Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                    std::function<void(detail::Node<T>&)> backward) {
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    nodes.reserve(inputs.size());
    for (const auto& t : inputs) {
        nodes.push_back(t.node());
    }
    return detail::make_result<T>(op, std::move(shape), std::move(values), std::move(nodes), std::move(backward));
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

enum class Elementwise { kAdd, kSub, kMul };

/// b must either match a's shape or equal a trailing suffix of it, in which
/// case it is broadcast along a's leading axes (bias addition).
template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!suffix) {
        throw ShapeError("elementwise: shape " + shape_str(sb) + " does not broadcast onto " + shape_str(sa));
    }
    const std::size_t n = a.size();
    const std::size_t nb = b.size();
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av[i];
        const double y = bv[i % nb];
        switch (kind) {
            case Elementwise::kAdd: out[i] = static_cast<T>(x + y); break;
            case Elementwise::kSub: out[i] = static_cast<T>(x - y); break;
            case Elementwise::kMul: out[i] = static_cast<T>(x * y); break;
        }
    }
    const char* name = kind == Elementwise::kAdd ? "add" : kind == Elementwise::kSub ? "sub" : "mul";
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(name, sa, std::move(out), {an, bn}, [kind, an, bn, n, nb](detail::Node<T>& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            std::vector<double> ga(n);
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] = kind == Elementwise::kMul ? double(g[i]) * double(bn->value[i % nb]) : double(g[i]);
            }
            an->accumulate(std::span<const double>(ga));
        }
        if (bn->requires_grad) {
            std::vector<double> gb(nb, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double v = g[i];
                if (kind == Elementwise::kSub) {
                    v = -v;
                } else if (kind == Elementwise::kMul) {
                    v *= double(an->value[i]);
                }
                gb[i % nb] += v;
            }
            bn->accumulate(std::span<const double>(gb));
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::kMul, a, b);
}

/// Multiplies every element by a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
    std::vector<T> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>(double(xv[i]) * factor);
    }
    auto xn = x.node();
    return detail::make_result<T>("scale", x.shape(), std::move(out), {xn}, [xn, factor](detail::Node<T>& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = double(self.grad[i]) * factor;
        }
        xn->accumulate(std::span<const double>(g));
    });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(m * n);
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) {
                continue;
            }
            const T* brow = &bv[p * n];
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += x * double(brow[j]);
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = static_cast<T>(acc[j]);
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>("matmul", {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node<T>& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            // dA = dC * B^T
            std::vector<double> ga(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        s += double(g[i * n + j]) * double(bn->value[p * n + j]);
                    }
                    ga[i * k + p] = s;
                }
            }
            an->accumulate(std::span<const double>(ga));
        }
        if (bn->requires_grad) {
            // dB = A^T * dC
            std::vector<double> gb(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = an->value[i * k + p];
                    if (x == 0.0) {
                        continue;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[p * n + j] += x * double(g[i * n + j]);
                    }
                }
            }
            bn->accumulate(std::span<const double>(gb));
        }
    });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { kRelu, kSigmoid, kTanh };

inline double stable_sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
    const auto xv = x.values();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        switch (kind) {
            case Activation::kRelu: out[i] = v > 0 ? xv[i] : T(0); break;
            case Activation::kSigmoid: out[i] = static_cast<T>(stable_sigmoid(v)); break;
            case Activation::kTanh: out[i] = static_cast<T>(std::tanh(v)); break;
        }
    }
    const char* name = kind == Activation::kRelu ? "relu" : kind == Activation::kSigmoid ? "sigmoid" : "tanh";
    auto xn = x.node();
    return detail::make_result<T>(name, x.shape(), std::move(out), {xn}, [kind, xn](detail::Node<T>& self) {
        const auto& g = self.grad;
        const auto& xv = xn->value;
        std::vector<double> gx(g.size());
        switch (kind) {
            case Activation::kRelu:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = xv[i] > T(0) ? double(g[i]) : 0.0;
                }
                break;
            case Activation::kSigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = stable_sigmoid(double(xv[i]));
                    gx[i] = double(g[i]) * s * (1.0 - s);
                }
                break;
            case Activation::kTanh:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double t = std::tanh(double(xv[i]));
                    gx[i] = double(g[i]) * (1.0 - t * t);
                }
                break;
        }
        xn->accumulate(std::span<const double>(gx));
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return activation(Activation::kRelu, x);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return activation(Activation::kSigmoid, x);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return activation(Activation::kTanh, x);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class Reduction { kSum, kMean, kMax };

/// Reduces over `axes` (empty = all axes). Reduced axes are dropped; reducing
/// everything yields shape [1]. Max routes its gradient to the lowest-index
/// maximum of each group.
template <typename T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    const auto& shape = x.shape();
    if (axes.empty()) {
        axes.resize(shape.size());
        std::iota(axes.begin(), axes.end(), std::size_t{0});
    }
    std::vector<bool> reduced(shape.size(), false);
    for (auto a : axes) {
        if (a >= shape.size()) {
            throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for " + shape_str(shape));
        }
        if (reduced[a]) {
            throw ShapeError("reduce: axis " + std::to_string(a) + " listed twice");
        }
        reduced[a] = true;
    }
    Shape out_shape;
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (!reduced[d]) {
            out_shape.push_back(shape[d]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    const std::size_t n = x.size();
    const std::size_t n_out = numel(out_shape);
    const std::size_t group = n / n_out;

    // Flat output index for every input element.
    auto mapping = std::make_shared<std::vector<std::size_t>>(n);
    {
        std::vector<std::size_t> idx(shape.size(), 0);
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::size_t o = 0;
            for (std::size_t d = 0; d < shape.size(); ++d) {
                if (!reduced[d]) {
                    o = o * shape[d] + idx[d];
                }
            }
            (*mapping)[flat] = o;
            for (std::size_t d = shape.size(); d-- > 0;) {
                if (++idx[d] < shape[d]) {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    const auto xv = x.values();
    std::vector<double> acc(n_out, kind == Reduction::kMax ? -std::numeric_limits<double>::infinity() : 0.0);
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (kind == Reduction::kMax) {
        argmax->assign(n_out, n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t o = (*mapping)[i];
        if (kind == Reduction::kMax) {
            if ((*argmax)[o] == n || double(xv[i]) > acc[o]) {
                acc[o] = xv[i];
                (*argmax)[o] = i;
            }
        } else {
            acc[o] += xv[i];
        }
    }
    std::vector<T> out(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
        out[o] = static_cast<T>(kind == Reduction::kMean ? acc[o] / double(group) : acc[o]);
    }
    const char* name = kind == Reduction::kSum ? "sum" : kind == Reduction::kMean ? "mean" : "max";
    auto xn = x.node();
    return detail::make_result<T>(name, out_shape, std::move(out), {xn},
                                  [kind, xn, mapping, argmax, n, group](detail::Node<T>& self) {
                                      std::vector<double> gx(n, 0.0);
                                      if (kind == Reduction::kMax) {
                                          for (std::size_t o = 0; o < argmax->size(); ++o) {
                                              gx[(*argmax)[o]] = self.grad[o];
                                          }
                                      } else {
                                          const double f = kind == Reduction::kMean ? 1.0 / double(group) : 1.0;
                                          for (std::size_t i = 0; i < n; ++i) {
                                              gx[i] = double(self.grad[(*mapping)[i]]) * f;
                                          }
                                      }
                                      xn->accumulate(std::span<const double>(gx));
                                  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    return reduce(Reduction::kSum, x, std::move(axes));
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    return reduce(Reduction::kMean, x, std::move(axes));
}
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    return reduce(Reduction::kMax, x, std::move(axes));
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto xn = x.node();
    return detail::make_result<T>("reshape", std::move(shape), std::vector<T>(x.values().begin(), x.values().end()),
                                  {xn}, [xn](detail::Node<T>& self) { xn->accumulate(std::span<const T>(self.grad)); });
}

/// Time axis of a [L, C] or [B, L, C] tensor (second to last); 0 for 1-D.
inline std::size_t time_axis(const Shape& shape) {
    return shape.size() >= 2 ? shape.size() - 2 : 0;
}

/// Prepends `amount` time steps filled with `value`.
template <typename T>
Tensor<T> pad_leading(const Tensor<T>& x, std::size_t amount, T value = T(0)) {
    if (amount == 0) {
        return x;
    }
    const auto& shape = x.shape();
    const std::size_t ax = time_axis(shape);
    std::size_t outer = 1;
    for (std::size_t d = 0; d < ax; ++d) {
        outer *= shape[d];
    }
    std::size_t inner = 1;
    for (std::size_t d = ax + 1; d < shape.size(); ++d) {
        inner *= shape[d];
    }
    const std::size_t len = shape[ax];
    Shape out_shape = shape;
    out_shape[ax] = len + amount;
    const auto xv = x.values();
    std::vector<T> out(numel(out_shape), value);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&xv[o * len * inner], len * inner, &out[(o * (len + amount) + amount) * inner]);
    }
    auto xn = x.node();
    return detail::make_result<T>("pad_leading", out_shape, std::move(out), {xn},
                                  [xn, outer, len, inner, amount](detail::Node<T>& self) {
                                      std::vector<T> gx(outer * len * inner);
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          std::copy_n(&self.grad[(o * (len + amount) + amount) * inner], len * inner,
                                                      &gx[o * len * inner]);
                                      }
                                      xn->accumulate(std::span<const T>(gx));
                                  });
}

/// Picks time step t of a [L, C] or [B, L, C] tensor, dropping the time axis.
template <typename T>
Tensor<T> select_time(const Tensor<T>& x, std::size_t t) {
    const auto& shape = x.shape();
    if (shape.size() < 2) {
        throw ShapeError("select_time needs a [.., L, C] tensor, got " + shape_str(shape));
    }
    const std::size_t ax = time_axis(shape);
    const std::size_t len = shape[ax];
    const std::size_t ch = shape.back();
    if (t >= len) {
        throw ShapeError("select_time: step " + std::to_string(t) + " beyond length " + std::to_string(len));
    }
    const std::size_t outer = x.size() / (len * ch);
    Shape out_shape(shape.begin(), shape.begin() + static_cast<std::ptrdiff_t>(ax));
    out_shape.push_back(ch);
    const auto xv = x.values();
    std::vector<T> out(outer * ch);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&xv[(o * len + t) * ch], ch, &out[o * ch]);
    }
    auto xn = x.node();
    return detail::make_result<T>("select_time", out_shape, std::move(out), {xn},
                                  [xn, outer, len, ch, t](detail::Node<T>& self) {
                                      std::vector<T> gx(outer * len * ch, T(0));
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          std::copy_n(&self.grad[o * ch], ch, &gx[(o * len + t) * ch]);
                                      }
                                      xn->accumulate(std::span<const T>(gx));
                                  });
}

/// Column j of a [B, K] matrix as a [B] vector.
template <typename T>
Tensor<T> select_column(const Tensor<T>& x, std::size_t j) {
    if (x.ndim() != 2 || j >= x.extent(1)) {
        throw ShapeError("select_column: column " + std::to_string(j) + " of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = x.values()[r * cols + j];
    }
    auto xn = x.node();
    return detail::make_result<T>("select_column", {rows}, std::move(out), {xn},
                                  [xn, rows, cols, j](detail::Node<T>& self) {
                                      std::vector<T> gx(rows * cols, T(0));
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          gx[r * cols + j] = self.grad[r];
                                      }
                                      xn->accumulate(std::span<const T>(gx));
                                  });
}

// ---------------------------------------------------------------------------
// Causal dilated convolution and dropout
// ---------------------------------------------------------------------------

namespace detail {

// Channel counts known at compile time let the inner loops unroll into a few
// vector registers; other widths fall back to a runtime trip count.
template <std::size_t N>
struct FixedWidth {
    static constexpr std::size_t value = N;
    constexpr std::size_t operator()() const { return N; }
};

struct RuntimeWidth {
    std::size_t value;
    std::size_t operator()() const { return value; }
};

template <typename Fn>
decltype(auto) dispatch_width(std::size_t n, Fn&& fn) {
    switch (n) {
        case 4: return fn(FixedWidth<4>{});
        case 8: return fn(FixedWidth<8>{});
        case 16: return fn(FixedWidth<16>{});
        case 32: return fn(FixedWidth<32>{});
        case 64: return fn(FixedWidth<64>{});
        default: return fn(RuntimeWidth{n});
    }
}

template <typename T, typename CinW, typename CoutW>
void conv_forward(const T* __restrict x, const double* __restrict wt, const T* __restrict bias, T* __restrict y,
                  std::size_t batch, std::size_t len, std::size_t ksize, std::size_t dilation, CinW cin_w,
                  CoutW cout_w) {
    const std::size_t cin = cin_w();
    const std::size_t cout = cout_w();
    std::vector<double> acc_buf(cout);
    double* __restrict acc = acc_buf.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t o = 0; o < cout; ++o) {
                acc[o] = bias[o];
            }
            for (std::size_t i = 0; i < ksize && dilation * i <= t; ++i) {
                const T* xr = x + (b * len + t - dilation * i) * cin;
                const double* wr = wt + i * cin * cout;
                for (std::size_t c = 0; c < cin; ++c) {
                    const double xval = xr[c];
                    const double* w = wr + c * cout;
                    for (std::size_t o = 0; o < cout; ++o) {
                        acc[o] += xval * w[o];
                    }
                }
            }
            T* yr = y + (b * len + t) * cout;
            for (std::size_t o = 0; o < cout; ++o) {
                yr[o] = static_cast<T>(acc[o]);
            }
        }
    }
}

// Input gradient as an anti-causal convolution of gy with wo ([k][Cout][Cin]):
// gx[s, c] = sum_{i, o} gy[s + dilation * i, o] * w[o, c, i].
template <typename T, typename CinW, typename CoutW>
void conv_backward_input(const T* __restrict gy, const double* __restrict wo, double* __restrict gx,
                         std::size_t batch, std::size_t len, std::size_t ksize, std::size_t dilation, CinW cin_w,
                         CoutW cout_w) {
    const std::size_t cin = cin_w();
    const std::size_t cout = cout_w();
    std::vector<double> acc_buf(cin);
    double* __restrict acc = acc_buf.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < len; ++s) {
            for (std::size_t c = 0; c < cin; ++c) {
                acc[c] = 0.0;
            }
            for (std::size_t i = 0; i < ksize && s + dilation * i < len; ++i) {
                const T* gr = gy + (b * len + s + dilation * i) * cout;
                const double* wr = wo + i * cout * cin;
                for (std::size_t o = 0; o < cout; ++o) {
                    const double g = gr[o];
                    const double* w = wr + o * cin;
                    for (std::size_t c = 0; c < cin; ++c) {
                        acc[c] += g * w[c];
                    }
                }
            }
            double* g = gx + (b * len + s) * cin;
            for (std::size_t c = 0; c < cin; ++c) {
                g[c] = acc[c];
            }
        }
    }
}

// Weight and bias gradients; gw is [k][Cin][Cout]. Products are summed in T
// within one sequence and flushed to the double accumulator per sequence.
template <typename T, typename CinW, typename CoutW>
void conv_backward_weight(const T* __restrict x, const T* __restrict gy, double* __restrict gw,
                          double* __restrict gb, std::size_t batch, std::size_t len, std::size_t ksize,
                          std::size_t dilation, CinW cin_w, CoutW cout_w) {
    const std::size_t cin = cin_w();
    const std::size_t cout = cout_w();
    for (std::size_t r = 0; r < batch * len; ++r) {
        const T* gr = gy + r * cout;
        for (std::size_t o = 0; o < cout; ++o) {
            gb[o] += gr[o];
        }
    }
    if (gw == nullptr) {
        return;
    }
    std::vector<T> acc_buf(cin * cout);
    T* __restrict acc = acc_buf.data();
    for (std::size_t i = 0; i < ksize && dilation * i < len; ++i) {
        const std::size_t shift = dilation * i;
        for (std::size_t b = 0; b < batch; ++b) {
            std::fill(acc_buf.begin(), acc_buf.end(), T(0));
            for (std::size_t t = shift; t < len; ++t) {
                const T* gr = gy + (b * len + t) * cout;
                const T* xr = x + (b * len + t - shift) * cin;
                for (std::size_t c = 0; c < cin; ++c) {
                    const T xv = xr[c];
                    T* a = acc + c * cout;
                    for (std::size_t o = 0; o < cout; ++o) {
                        a[o] += xv * gr[o];
                    }
                }
            }
            double* dst = gw + i * cin * cout;
            for (std::size_t q = 0; q < cin * cout; ++q) {
                dst[q] += acc[q];
            }
        }
    }
}

}  // namespace detail

/// y[t, o] = bias[o] + sum_{c, i} w[o, c, i] * x[t - dilation * i, c], with x
/// read as zero before the first step. Equivalent to pad_leading by
/// (k - 1) * dilation followed by a valid convolution, without materializing
/// the padding. Accepts [L, Cin] or [B, L, Cin]; weight is [Cout, Cin, k].
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t dilation) {
    if (x.ndim() != 2 && x.ndim() != 3) {
        throw ShapeError("causal_conv1d: input must be [L,C] or [B,L,C], got " + shape_str(x.shape()));
    }
    if (weight.ndim() != 3) {
        throw ShapeError("causal_conv1d: weight must be [Cout,Cin,k], got " + shape_str(weight.shape()));
    }
    if (dilation == 0) {
        throw ShapeError("causal_conv1d: dilation must be positive");
    }
    const std::size_t cout = weight.extent(0), cin = weight.extent(1), ksize = weight.extent(2);
    if (x.shape().back() != cin) {
        throw ShapeError("causal_conv1d: input has " + std::to_string(x.shape().back()) + " channels, weight expects " +
                         std::to_string(cin));
    }
    if (bias.ndim() != 1 || bias.extent(0) != cout) {
        throw ShapeError("causal_conv1d: bias must be [" + std::to_string(cout) + "]");
    }
    const std::size_t batch = x.ndim() == 3 ? x.extent(0) : 1;
    const std::size_t len = x.shape()[x.ndim() - 2];

    // Weights as [k][Cin][Cout] for the forward pass and [k][Cout][Cin] for
    // the input gradient, so the inner loop always walks contiguous memory.
    std::vector<double> wt(ksize * cin * cout);
    auto wo = std::make_shared<std::vector<double>>(ksize * cin * cout);
    const auto wv = weight.values();
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t i = 0; i < ksize; ++i) {
                const double w = wv[(o * cin + c) * ksize + i];
                wt[(i * cin + c) * cout + o] = w;
                (*wo)[(i * cout + o) * cin + c] = w;
            }
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    std::vector<T> out(batch * len * cout);
    detail::dispatch_width(cin, [&](auto cin_w) {
        detail::dispatch_width(cout, [&](auto cout_w) {
            detail::conv_forward(x.values().data(), wt.data(), bias.values().data(), out.data(), batch, len, ksize,
                                 dilation, cin_w, cout_w);
        });
    });
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    return detail::make_result<T>(
        "causal_conv1d", out_shape, std::move(out), {xn, wn, bn},
        [xn, wn, bn, wo, batch, len, cin, cout, ksize, dilation](detail::Node<T>& self) {
            std::vector<double> gx(xn->requires_grad ? batch * len * cin : 0, 0.0);
            std::vector<double> gw(wn->requires_grad ? ksize * cin * cout : 0, 0.0);
            std::vector<double> gb(cout, 0.0);
            const T* gy = self.grad.data();
            detail::dispatch_width(cin, [&](auto cin_w) {
                detail::dispatch_width(cout, [&](auto cout_w) {
                    if (xn->requires_grad) {
                        detail::conv_backward_input(gy, wo->data(), gx.data(), batch, len, ksize, dilation, cin_w,
                                                    cout_w);
                    }
                    if (wn->requires_grad || bn->requires_grad) {
                        detail::conv_backward_weight(xn->value.data(), gy, gw.empty() ? nullptr : gw.data(),
                                                     gb.data(), batch, len, ksize, dilation, cin_w, cout_w);
                    }
                });
            });
            if (xn->requires_grad) {
                xn->accumulate(std::span<const double>(gx));
            }
            if (wn->requires_grad) {
                std::vector<double> gw_native(ksize * cin * cout);
                for (std::size_t o = 0; o < cout; ++o) {
                    for (std::size_t c = 0; c < cin; ++c) {
                        for (std::size_t i = 0; i < ksize; ++i) {
                            gw_native[(o * cin + c) * ksize + i] = gw[(i * cin + c) * cout + o];
                        }
                    }
                }
                wn->accumulate(std::span<const double>(gw_native));
            }
            if (bn->requires_grad) {
                bn->accumulate(std::span<const double>(gb));
            }
        });
}

/// Inverted dropout: zeroes each element with probability `ratio` and scales
/// survivors by 1 / (1 - ratio).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("dropout ratio must be in [0, 1)");
    }
    if (ratio == 0.0) {
        return x;
    }
    const double keep = 1.0 / (1.0 - ratio);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<T> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = uniform01(rng) < ratio ? 0.0 : keep;
        out[i] = static_cast<T>(double(xv[i]) * (*mask)[i]);
    }
    auto xn = x.node();
    return detail::make_result<T>("dropout", x.shape(), std::move(out), {xn}, [xn, mask](detail::Node<T>& self) {
        std::vector<double> gx(mask->size());
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] = double(self.grad[i]) * (*mask)[i];
        }
        xn->accumulate(std::span<const double>(gx));
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Topologically ordered record of the operations reachable from a root.
template <typename T>
class GradientTape {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    explicit GradientTape(const Tensor<T>& root) : root_(root.node()) {
        // Iterative post-order DFS: every entry's inputs precede it.
        std::unordered_set<const detail::Node<T>*> seen;
        std::vector<std::pair<NodePtr, std::size_t>> stack;
        if (root_->requires_grad) {
            stack.emplace_back(root_, 0);
            seen.insert(root_.get());
        }
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                auto child = node->inputs[next++];
                if (child->requires_grad && seen.insert(child.get()).second) {
                    stack.emplace_back(std::move(child), 0);
                }
                continue;
            }
            entries_.push_back(node);
            stack.pop_back();
        }
    }

    std::size_t size() const { return entries_.size(); }
    const std::vector<NodePtr>& entries() const { return entries_; }

    /// Seeds d(root)/d(root) = 1, visits each entry once in reverse order,
    /// then frees interior nodes. Returns the leaves that received gradients.
    std::vector<Tensor<T>> replay() {
        if (replayed_) {
            throw std::logic_error("gradient tape already replayed");
        }
        replayed_ = true;
        std::vector<Tensor<T>> leaves;
        if (entries_.empty()) {
            return leaves;
        }
        root_->grad_buffer();
        root_->grad[0] = static_cast<T>(static_cast<double>(root_->grad[0]) + 1.0);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            auto& node = **it;
            if (node.backward) {
                if (!node.grad.empty()) {
                    node.backward(node);
                }
            } else {
                leaves.emplace_back(*it);
            }
        }
        for (auto& node : entries_) {
            if (node->backward) {
                node->backward = nullptr;
                node->inputs.clear();
                node->grad.clear();
                node->grad.shrink_to_fit();
            }
        }
        return leaves;
    }

private:
    NodePtr root_;
    std::vector<NodePtr> entries_;
    bool replayed_ = false;
};

/// Accumulates d(scalar)/d(leaf) into every reachable leaf requiring grad.
template <typename T>
std::vector<Tensor<T>> backward(const Tensor<T>& scalar) {
    if (scalar.size() != 1) {
        throw ShapeError("backward needs a single-element tensor, got " + shape_str(scalar.shape()));
    }
    GradientTape<T> tape(scalar);
    return tape.replay();
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of scalar-valued `f` at `x` against central
/// differences; returns the maximum relative error over coordinates.
template <typename T>
double finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
    if (!(eps > 0)) {
        throw std::invalid_argument("finite_difference_check: eps must be positive");
    }
    auto probe = x.detach(true);
    auto y = f(probe);
    if (y.size() != 1) {
        throw ShapeError("finite_difference_check: f must return a single element, got " + shape_str(y.shape()));
    }
    backward(y);
    std::vector<double> analytic(x.size(), 0.0);
    if (probe.has_grad()) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            analytic[i] = probe.grad()[i];
        }
    }
    auto point = x.detach(false);
    auto vals = point.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const T orig = vals[i];
        vals[i] = static_cast<T>(double(orig) + eps);
        const double up = f(point).item();
        vals[i] = static_cast<T>(double(orig) - eps);
        const double down = f(point).item();
        vals[i] = orig;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    return worst;
}

/// Same check against a leaf captured by `f` (e.g. a model parameter); the
/// leaf is perturbed in place and restored. `max_coords` > 0 checks an evenly
/// strided subset of coordinates.
template <typename T>
double finite_difference_check_leaf(const std::function<Tensor<T>()>& f, Tensor<T> leaf, double eps,
                                    std::size_t max_coords = 0) {
    if (!(eps > 0)) {
        throw std::invalid_argument("finite_difference_check: eps must be positive");
    }
    leaf.zero_grad();
    auto y = f();
    if (y.size() != 1) {
        throw ShapeError("finite_difference_check: f must return a single element");
    }
    backward(y);
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) {
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            analytic[i] = leaf.grad()[i];
        }
    }
    leaf.zero_grad();
    auto vals = leaf.mutable_values();
    const std::size_t stride = max_coords == 0 || vals.size() <= max_coords ? 1 : vals.size() / max_coords;
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); i += stride) {
        const T orig = vals[i];
        vals[i] = static_cast<T>(double(orig) + eps);
        const double up = f().item();
        vals[i] = static_cast<T>(double(orig) - eps);
        const double down = f().item();
        vals[i] = orig;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    return worst;
}

}  // namespace tcnbind
