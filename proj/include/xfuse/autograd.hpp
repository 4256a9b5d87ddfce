#pragma once

// Tape-based reverse-mode differentiation over the tensor-core primitives.
//
// A Graph records one node per operation in creation order, which is already a
// topological order. Nodes whose inputs do not require gradients keep no
// backward closure. Parameters live in a ParamStore and are bound into a graph
// as leaves; Graph::backward pushes leaf gradients back into the store.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xfuse/ops.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

struct Parameter {
    Tensor value;
    Tensor grad;
    Tensor velocity;
    bool trainable = true;
};

/// Named parameter tensors. Iteration order is lexicographic by name, which
/// fixes every reduction and serialization order.
class ParamStore {
public:
    Parameter& add(const std::string& name, Tensor value, bool trainable = true) {
        if (entries_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
        Parameter p;
        p.grad = Tensor::zeros_like(value);
        p.velocity = Tensor::zeros_like(value);
        p.value = std::move(value);
        p.trainable = trainable;
        return entries_.emplace(name, std::move(p)).first->second;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Parameter& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
        return it->second;
    }
    const Parameter& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
        return it->second;
    }

    void set(const std::string& name, Tensor value) {
        Parameter& p = at(name);
        p.value.same_shape(value, name.c_str());
        p.value = std::move(value);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    void zero_grad() {
        for (auto& [_, p] : entries_) p.grad.fill(0.0);
    }

    /// Marks every entry whose name starts with `prefix`.
    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& [k, p] : entries_)
            if (k.rfind(prefix, 0) == 0) p.trainable = trainable;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, p] : entries_) n += p.value.size();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, Parameter> entries_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor&)>;

    /// With tracking off, parameters bind as constants and no backward
    /// closures are kept (inference).
    explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value) { return push(std::move(value), {}, false, nullptr, nullptr); }

    /// Free input whose gradient is wanted (not tied to a ParamStore).
    Var variable(Tensor value) { return push(std::move(value), {}, track_, nullptr, nullptr); }

    Var param(ParamStore& store, const std::string& name) {
        Parameter& p = store.at(name);
        return push(p.value, {}, p.trainable && track_, nullptr, &p);
    }

    /// Records an operation node. `backward` receives dL/d(output) and must
    /// call accumulate() on the inputs that require gradients.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
    }

    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        bool needs = false;
        for (const Var& v : inputs) {
            if (v.graph_ != this) throw InternalError("graph: input belongs to a different graph");
            ids.push_back(v.id_);
            needs = needs || nodes_[v.id_].requires_grad;
        }
        return push(std::move(value), std::move(ids), needs, needs ? std::move(backward) : nullptr, nullptr);
    }

    bool requires_grad(const Var& v) const { return nodes_.at(v.id_).requires_grad; }

    void accumulate(const Var& v, const Tensor& g) {
        Node& n = nodes_.at(v.id_);
        if (!n.requires_grad) return;
        if (n.grad.empty()) {
            n.value.same_shape(g, "accumulate");
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Reverse sweep from a scalar node. Parameter leaves add their gradient
    /// into the bound ParamStore entry.
    void backward(const Var& loss) {
        if (loss.graph_ != this) throw InternalError("graph: loss belongs to a different graph");
        if (nodes_.at(loss.id_).value.size() != 1)
            throw ArgumentError("backward: loss must be scalar, got shape " +
                                shape_string(nodes_[loss.id_].value.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        Node& root = nodes_[loss.id_];
        if (!root.requires_grad) return;
        root.grad = Tensor(root.value.shape(), 1.0);
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            for (std::size_t in : n.inputs)
                if (in >= i) throw InternalError("graph: node inputs do not precede the node (cycle)");
            if (n.backward) n.backward(*this, n.grad);
            if (n.param) n.param->grad += n.grad;
        }
    }

    /// Folds branch decisions of non-smooth ops (ReLU masks, pooling argmax,
    /// clip/abs signs) into a running hash. Two evaluations with equal
    /// signatures took the same linear piece.
    void note_branch(std::uint64_t bits) {
        kink_hash_ ^= bits + 0x9e3779b97f4a7c15ULL + (kink_hash_ << 6) + (kink_hash_ >> 2);
    }
    std::uint64_t kink_signature() const { return kink_hash_; }

    std::size_t size() const { return nodes_.size(); }

    const Tensor& value_of(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& grad_of(std::size_t id) const { return nodes_.at(id).grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };

    Var push(Tensor value, std::vector<std::size_t> inputs, bool requires_grad, BackwardFn backward,
             Parameter* param) {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        n.param = param;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;  // stable references across push_back
    bool track_ = true;
    std::uint64_t kink_hash_ = 0xcbf29ce484222325ULL;
};

inline const Tensor& Var::value() const { return graph_->value_of(id_); }
inline const Tensor& Var::grad() const { return graph_->grad_of(id_); }

/// Zeroes every gradient in `store`, then back-propagates `loss`. Entries the
/// graph never reached keep a zero gradient.
inline void backward(const Var& loss, ParamStore& store) {
    store.zero_grad();
    loss.graph().backward(loss);
}

// =================================================================== ops

namespace detail {
inline std::uint64_t hash_bools(const std::vector<bool>& bits) {
    std::uint64_t h = 1469598103934665603ULL;
    std::uint64_t word = 0;
    std::size_t k = 0;
    for (bool b : bits) {
        word = (word << 1) | (b ? 1u : 0u);
        if (++k == 64) {
            h = (h ^ word) * 1099511628211ULL;
            word = 0;
            k = 0;
        }
    }
    h = (h ^ word) * 1099511628211ULL;
    return h ^ bits.size();
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    a.value().same_shape(b.value(), "add");
    return a.graph().record(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
        g.accumulate(a, go);
        g.accumulate(b, go);
    });
}

inline Var sub(const Var& a, const Var& b) {
    return a.graph().record(a.value() - b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
        g.accumulate(a, go);
        g.accumulate(b, go * -1.0);
    });
}

inline Var mul(const Var& a, const Var& b) {
    a.value().same_shape(b.value(), "mul");
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        if (g.requires_grad(a)) {
            Tensor ga(go.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * b.value()[i];
            g.accumulate(a, ga);
        }
        if (g.requires_grad(b)) {
            Tensor gb(go.shape());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = go[i] * a.value()[i];
            g.accumulate(b, gb);
        }
    });
}

inline Var div(const Var& a, const Var& b) {
    a.value().same_shape(b.value(), "div");
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (g.requires_grad(a)) {
            Tensor ga(go.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] / bv[i];
            g.accumulate(a, ga);
        }
        if (g.requires_grad(b)) {
            Tensor gb(go.shape());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -go[i] * av[i] / (bv[i] * bv[i]);
            g.accumulate(b, gb);
        }
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

/// scale * x + shift, elementwise.
inline Var affine(const Var& x, double scale, double shift = 0.0) {
    Tensor out = map(x.value(), [=](double v) { return scale * v + shift; });
    return x.graph().record(std::move(out), {x}, [x, scale](Graph& g, const Tensor& go) { g.accumulate(x, go * scale); });
}

inline Var scale(const Var& x, double s) { return affine(x, s, 0.0); }

template <class Fwd, class Deriv>
Var unary(const Var& x, Fwd&& fwd, Deriv&& deriv) {
    Tensor out = map(x.value(), fwd);
    return x.graph().record(std::move(out), {x}, [x, deriv](Graph& g, const Tensor& go) {
        Tensor gx(go.shape());
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * deriv(xv[i]);
        g.accumulate(x, gx);
    });
}

inline Var relu(const Var& x) {
    std::vector<bool> mask(x.value().size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = x.value()[i] > 0.0;
    x.graph().note_branch(detail::hash_bools(mask));
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Clip(x) = max(x, 0).
inline Var clip(const Var& x) { return relu(x); }

inline Var sigmoid(const Var& x) {
    Tensor out = sigmoid(x.value());
    Tensor saved = out;
    return x.graph().record(std::move(out), {x}, [x, saved](Graph& g, const Tensor& go) {
        Tensor gx(go.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * saved[i] * (1.0 - saved[i]);
        g.accumulate(x, gx);
    });
}

inline Var gelu(const Var& x) {
    return unary(x, [](double v) { return gelu(v); }, [](double v) { return gelu_derivative(v); });
}

inline Var abs(const Var& x) {
    std::vector<bool> sign(x.value().size());
    for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = x.value()[i] > 0.0;
    x.graph().note_branch(detail::hash_bools(sign));
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

/// Elementwise max; both operands get subgradient 0 at exact ties.
inline Var maximum(const Var& a, const Var& b) {
    a.value().same_shape(b.value(), "maximum");
    const std::size_t n = a.value().size();
    Tensor out(a.value().shape());
    std::vector<bool> pick_a(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::max(a.value()[i], b.value()[i]);
        pick_a[i] = a.value()[i] > b.value()[i];
    }
    a.graph().note_branch(detail::hash_bools(pick_a));
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        Tensor ga(go.shape()), gb(go.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            const double av = a.value()[i], bv = b.value()[i];
            if (av > bv) ga[i] = go[i];
            else if (bv > av) gb[i] = go[i];
        }
        g.accumulate(a, ga);
        g.accumulate(b, gb);
    });
}

inline Var sum(const Var& x) {
    return x.graph().record(Tensor({1}, {x.value().sum()}), {x}, [x](Graph& g, const Tensor& go) {
        g.accumulate(x, Tensor(x.value().shape(), go[0]));
    });
}

inline Var mean(const Var& x) {
    const double n = double(x.value().size());
    return x.graph().record(Tensor({1}, {x.value().sum() / n}), {x}, [x, n](Graph& g, const Tensor& go) {
        g.accumulate(x, Tensor(x.value().shape(), go[0] / n));
    });
}

inline Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

inline Var reshape(const Var& x, Shape s) {
    return x.graph().record(x.value().reshaped(s), {x}, [x](Graph& g, const Tensor& go) {
        g.accumulate(x, go.reshaped(x.value().shape()));
    });
}

// ------------------------------------------------------------ matrices

inline Var matmul(const Var& a, const Var& b) {
    return a.graph().record(matmul(a.value(), b.value()), {a, b}, [a, b](Graph& g, const Tensor& go) {
        if (g.requires_grad(a)) g.accumulate(a, matmul(go, transpose(b.value())));
        if (g.requires_grad(b)) g.accumulate(b, matmul(transpose(a.value()), go));
    });
}

inline Var transpose(const Var& a) {
    return a.graph().record(transpose(a.value()), {a}, [a](Graph& g, const Tensor& go) {
        g.accumulate(a, transpose(go));
    });
}

/// Adds a length-m bias to every row of an n x m matrix.
inline Var add_row_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    xv.require_rank(2, "add_row_bias");
    const std::size_t n = xv.dim(0), m = xv.dim(1);
    if (bias.value().size() != m) throw ShapeError("add_row_bias: bias length mismatch");
    Tensor out = xv;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) += bias.value()[j];
    return x.graph().record(std::move(out), {x, bias}, [x, bias, n, m](Graph& g, const Tensor& go) {
        g.accumulate(x, go);
        if (g.requires_grad(bias)) {
            Tensor gb(bias.value().shape());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb[j] += go.at(i, j);
            g.accumulate(bias, gb);
        }
    });
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row_bias(matmul(x, weight), bias); }

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    xv.require_rank(2, "slice_cols");
    const std::size_t n = xv.dim(0), m = xv.dim(1);
    if (begin + count > m) throw ShapeError("slice_cols: range out of bounds");
    Tensor out({n, count});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, begin + j);
    return x.graph().record(std::move(out), {x}, [x, begin, count, n, m](Graph& g, const Tensor& go) {
        Tensor gx({n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) gx.at(i, begin + j) = go.at(i, j);
        g.accumulate(x, gx);
    });
}

inline Var rowwise_softmax(const Var& x) {
    Tensor y = rowwise_softmax(x.value());
    Tensor saved = y;
    return x.graph().record(std::move(y), {x}, [x, saved](Graph& g, const Tensor& go) {
        g.accumulate(x, rowwise_softmax_backward(saved, go));
    });
}

inline Var re_softmax(const Var& x) {
    Tensor y = re_softmax(x.value());
    Tensor saved = y;
    return x.graph().record(std::move(y), {x}, [x, saved](Graph& g, const Tensor& go) {
        g.accumulate(x, rowwise_softmax_backward(saved, go) * -1.0);
    });
}

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
    LayerNormCache cache = layer_norm_normalize(x.value());
    const std::size_t n = x.value().dim(0), d = x.value().dim(1);
    if (gamma.value().size() != d || beta.value().size() != d) throw ShapeError("layer_norm: affine size mismatch");
    Tensor out(x.value().shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = cache.normalized.at(i, j) * gamma.value()[j] + beta.value()[j];
    return x.graph().record(std::move(out), {x, gamma, beta},
                            [x, gamma, beta, cache = std::move(cache), n, d](Graph& g, const Tensor& go) {
                                if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                                    Tensor gg(gamma.value().shape()), gb(beta.value().shape());
                                    for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < d; ++j) {
                                            gg[j] += go.at(i, j) * cache.normalized.at(i, j);
                                            gb[j] += go.at(i, j);
                                        }
                                    g.accumulate(gamma, gg);
                                    g.accumulate(beta, gb);
                                }
                                if (g.requires_grad(x)) {
                                    Tensor gn(go.shape());
                                    for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < d; ++j) gn.at(i, j) = go.at(i, j) * gamma.value()[j];
                                    g.accumulate(x, layer_norm_backward(cache, gn));
                                }
                            });
}

/// Applies a fixed row permutation: out[i] = x[perm[i]].
inline Var permute_rows(const Var& x, std::vector<std::size_t> perm) {
    const Tensor& xv = x.value();
    xv.require_rank(2, "permute_rows");
    const std::size_t n = xv.dim(0), m = xv.dim(1);
    if (perm.size() != n) throw ShapeError("permute_rows: permutation length mismatch");
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = xv.at(perm[i], j);
    return x.graph().record(std::move(out), {x}, [x, perm = std::move(perm), n, m](Graph& g, const Tensor& go) {
        Tensor gx({n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gx.at(perm[i], j) += go.at(i, j);
        g.accumulate(x, gx);
    });
}

// ------------------------------------------------------------- spatial

inline Var pad2d(const Var& x, std::size_t p, Padding mode) {
    if (p == 0 || mode == Padding::valid) return x;
    const std::size_t H = x.value().dim(1), W = x.value().dim(2);
    return x.graph().record(pad2d(x.value(), p, mode), {x}, [x, p, mode, H, W](Graph& g, const Tensor& go) {
        g.accumulate(x, pad2d_backward(go, H, W, p, mode));
    });
}

/// Valid cross-correlation; weight [O,C,kh,kw], bias [O].
inline Var conv2d_valid(const Var& x, const Var& weight, const Var& bias, std::size_t stride = 1) {
    Tensor out = conv2d_valid(x.value(), weight.value(), bias.value().data(), stride);
    return x.graph().record(std::move(out), {x, weight, bias}, [x, weight, bias, stride](Graph& g, const Tensor& go) {
        const bool need_w = g.requires_grad(weight) || g.requires_grad(bias);
        ConvGrads cg = conv2d_valid_backward(x.value(), weight.value(), go, stride, g.requires_grad(x), need_w);
        if (g.requires_grad(x)) g.accumulate(x, cg.input);
        if (need_w) {
            g.accumulate(weight, cg.weight);
            g.accumulate(bias, Tensor(bias.value().shape(), std::move(cg.bias)));
        }
    });
}

/// Same-size convolution (odd square kernel) with the given padding mode.
inline Var conv2d_same(const Var& x, const Var& weight, const Var& bias, Padding mode = Padding::reflect) {
    const std::size_t k = weight.value().dim(2);
    if (k % 2 == 0) throw ShapeError("conv2d_same: kernel size must be odd");
    return conv2d_valid(pad2d(x, k / 2, mode), weight, bias);
}

inline Var maxpool2(const Var& x) {
    PoolResult r = maxpool2_indexed(x.value());
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i : r.argmax) h = (h ^ i) * 1099511628211ULL;
    x.graph().note_branch(h);
    return x.graph().record(std::move(r.output), {x}, [x, idx = std::move(r.argmax)](Graph& g, const Tensor& go) {
        g.accumulate(x, maxpool2_backward(go, idx, x.value().shape()));
    });
}

inline Var upsample2(const Var& x) {
    return x.graph().record(upsample2(x.value()), {x}, [x](Graph& g, const Tensor& go) {
        g.accumulate(x, upsample2_backward(go));
    });
}

inline Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: nothing to concatenate");
    const std::size_t H = parts[0].value().dim(1), W = parts[0].value().dim(2);
    std::size_t C = 0;
    for (const Var& p : parts) {
        p.value().require_rank(3, "concat_channels");
        if (p.value().dim(1) != H || p.value().dim(2) != W) throw ShapeError("concat_channels: spatial mismatch");
        C += p.value().dim(0);
    }
    Tensor out({C, H, W});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + long(offset));
        offset += p.value().size();
    }
    return parts[0].graph().record(std::move(out), parts, [parts](Graph& g, const Tensor& go) {
        std::size_t off = 0;
        for (const Var& p : parts) {
            const std::size_t n = p.value().size();
            if (g.requires_grad(p)) {
                Tensor gp(p.value().shape());
                std::copy(go.data().begin() + long(off), go.data().begin() + long(off + n), gp.data().begin());
                g.accumulate(p, gp);
            }
            off += n;
        }
    });
}

inline Var mean_filter(const Var& x, std::size_t k) {
    return x.graph().record(mean_filter(x.value(), k), {x}, [x, k](Graph& g, const Tensor& go) {
        g.accumulate(x, mean_filter_backward(go, k));
    });
}

inline Var cyclic_shift(const Var& x, long dy, long dx) {
    return x.graph().record(cyclic_shift(x.value(), dy, dx), {x}, [x, dy, dx](Graph& g, const Tensor& go) {
        g.accumulate(x, cyclic_shift(go, -dy, -dx));
    });
}

inline Var to_tokens(const Var& map) {
    const std::size_t H = map.value().dim(1), W = map.value().dim(2);
    return map.graph().record(to_tokens(map.value()), {map}, [map, H, W](Graph& g, const Tensor& go) {
        g.accumulate(map, from_tokens(go, H, W));
    });
}

inline Var from_tokens(const Var& tokens, std::size_t H, std::size_t W) {
    return tokens.graph().record(from_tokens(tokens.value(), H, W), {tokens}, [tokens](Graph& g, const Tensor& go) {
        g.accumulate(tokens, to_tokens(go));
    });
}

}  // namespace xfuse
