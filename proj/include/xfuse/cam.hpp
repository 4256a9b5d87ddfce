#pragma once

// Cross-attention mechanism. Each modality's deep tokens go through
// self-attention, a cyclic shift, more self-attention and the inverse shift;
// cross-attention then takes queries from the other modality and keys/values
// from its own, weighting keys with the reversed softmax so that the least
// correlated content dominates. The two branch outputs are added.

#include <cmath>
#include <string>
#include <vector>

#include "xfuse/config.hpp"
#include "xfuse/encoder.hpp"
#include "xfuse/layers.hpp"

namespace xfuse {

enum class AttentionActivation { softmax, reversed_softmax };

/// out[(y,x)] = in[((y - dy) mod H, (x - dx) mod W)] over a row-major token grid.
inline std::vector<std::size_t> shift_permutation(std::size_t H, std::size_t W, long dy, long dx) {
    std::vector<std::size_t> perm(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            perm[y * W + x] = wrap_index(long(y) - dy, H) * W + wrap_index(long(x) - dx, W);
    return perm;
}

inline Var shift_tokens(const Var& tokens, std::size_t H, std::size_t W, long dy, long dx) {
    return permute_rows(tokens, shift_permutation(H, W, dy, dx));
}

inline Tensor attention_weights(const Tensor& scores, AttentionActivation act) {
    return act == AttentionActivation::softmax ? rowwise_softmax(scores) : re_softmax(scores);
}

namespace detail {

inline void init_mlp(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng) {
    init_linear(store, prefix + ".fc1", d, 4 * d, rng);
    init_linear(store, prefix + ".fc2", 4 * d, d, rng);
}

inline Var mlp(Graph& g, ParamStore& store, const std::string& prefix, const Var& x) {
    return linear_layer(g, store, prefix + ".fc2", gelu(linear_layer(g, store, prefix + ".fc1", x)));
}

// x + norm(attend(scores) V), then + MLP(norm(.)).
inline Var attention_residual(Graph& g, ParamStore& store, const std::string& prefix, const Var& residual,
                              const Var& q, const Var& k, const Var& v, AttentionActivation act,
                              Tensor* attention_out) {
    const double inv_sqrt_d = 1.0 / std::sqrt(double(q.value().dim(1)));
    Var scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
    Var weights = act == AttentionActivation::softmax ? rowwise_softmax(scores) : re_softmax(scores);
    if (attention_out) *attention_out = weights.value();
    Var out = add(residual, layer_norm_layer(g, store, prefix + ".norm1", matmul(weights, v)));
    return add(out, mlp(g, store, prefix + ".mlp", layer_norm_layer(g, store, prefix + ".norm2", out)));
}

}  // namespace detail

/// Self-attention block: [Q,K,V] = x U_qkv with U_qkv of shape d x 3d.
class SABlock {
public:
    SABlock(std::string prefix, std::size_t d) : prefix_(std::move(prefix)), d_(d) {}

    void init(ParamStore& store, Rng& rng) const {
        store.add(prefix_ + ".qkv", random_normal({d_, 3 * d_}, std::sqrt(1.0 / double(d_)), rng));
        init_layer_norm(store, prefix_ + ".norm1", d_);
        init_layer_norm(store, prefix_ + ".norm2", d_);
        detail::init_mlp(store, prefix_ + ".mlp", d_, rng);
    }

    Var forward(Graph& g, ParamStore& store, const Var& x, Tensor* attention = nullptr) const {
        x.value().require_rank(2, "sa_block");
        if (x.value().dim(1) != d_)
            throw ShapeError("sa_block: token dim " + std::to_string(x.value().dim(1)) + " != " + std::to_string(d_));
        Var qkv = matmul(x, g.param(store, prefix_ + ".qkv"));
        return detail::attention_residual(g, store, prefix_, x, slice_cols(qkv, 0, d_), slice_cols(qkv, d_, d_),
                                          slice_cols(qkv, 2 * d_, d_), AttentionActivation::softmax, attention);
    }

    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    std::size_t d_;
};

/// Cross-attention block: Q from the other modality, K and V from the own
/// modality, each through its own d x d projection.
class CABlock {
public:
    CABlock(std::string prefix, std::size_t d, AttentionActivation act = AttentionActivation::reversed_softmax)
        : prefix_(std::move(prefix)), d_(d), act_(act) {}

    void init(ParamStore& store, Rng& rng) const {
        const double s = std::sqrt(1.0 / double(d_));
        store.add(prefix_ + ".q", random_normal({d_, d_}, s, rng));
        store.add(prefix_ + ".k", random_normal({d_, d_}, s, rng));
        store.add(prefix_ + ".v", random_normal({d_, d_}, s, rng));
        init_layer_norm(store, prefix_ + ".norm1", d_);
        init_layer_norm(store, prefix_ + ".norm2", d_);
        detail::init_mlp(store, prefix_ + ".mlp", d_, rng);
    }

    Var forward(Graph& g, ParamStore& store, const Var& own, const Var& other, Tensor* attention = nullptr) const {
        own.value().require_rank(2, "ca_block");
        other.value().require_rank(2, "ca_block");
        if (own.value().dim(0) != other.value().dim(0))
            throw ShapeError("ca_block: token counts differ between modalities");
        if (own.value().dim(1) != d_ || other.value().dim(1) != d_) throw ShapeError("ca_block: token dim mismatch");
        Var q = matmul(other, g.param(store, prefix_ + ".q"));
        Var k = matmul(own, g.param(store, prefix_ + ".k"));
        Var v = matmul(own, g.param(store, prefix_ + ".v"));
        return detail::attention_residual(g, store, prefix_, own, q, k, v, act_, attention);
    }

    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    std::size_t d_;
    AttentionActivation act_;
};

struct CamLayout {
    std::size_t sa_blocks = 1;  // per position (before and after the shift)
    std::size_t ca_blocks = 1;
    bool re_softmax = true;
    bool shift = true;
    std::size_t dim = kDeepChannels;

    static CamLayout from_config(const FuseConfig& c) { return {c.sa_blocks, c.ca_blocks, c.re_softmax, c.shift}; }
};

class Cam {
public:
    explicit Cam(std::string prefix = "cam", CamLayout layout = {}) : prefix_(std::move(prefix)), layout_(layout) {
        const auto act = layout.re_softmax ? AttentionActivation::reversed_softmax : AttentionActivation::softmax;
        for (Modality m : {Modality::ir, Modality::vi}) {
            Branch b;
            const std::string base = prefix_ + "." + to_string(m);
            for (std::size_t i = 0; i < layout.sa_blocks; ++i) {
                b.sa_pre.emplace_back(base + ".sa_pre" + std::to_string(i), layout.dim);
                b.sa_post.emplace_back(base + ".sa_post" + std::to_string(i), layout.dim);
            }
            for (std::size_t i = 0; i < layout.ca_blocks; ++i) b.ca.emplace_back(base + ".ca" + std::to_string(i), layout.dim, act);
            branches_.push_back(std::move(b));
        }
    }

    void init(ParamStore& store, Rng& rng) const {
        for (const auto& b : branches_) {
            for (const auto& s : b.sa_pre) s.init(store, rng);
            for (const auto& s : b.sa_post) s.init(store, rng);
            for (const auto& c : b.ca) c.init(store, rng);
        }
    }

    /// Shift applied on an H x W token grid: half the grid in each direction.
    std::pair<long, long> shift_offsets(std::size_t H, std::size_t W) const {
        if (!layout_.shift) return {0, 0};
        return {long(H / 2), long(W / 2)};
    }

    /// Self-attention stage of one branch: SA, shift, SA, unshift.
    Var intra(Graph& g, ParamStore& store, Modality m, const Var& tokens, std::size_t H, std::size_t W) const {
        const Branch& b = branch(m);
        Var t = tokens;
        for (const auto& s : b.sa_pre) t = s.forward(g, store, t);
        const auto [dy, dx] = shift_offsets(H, W);
        if (dy || dx) t = shift_tokens(t, H, W, dy, dx);
        for (const auto& s : b.sa_post) t = s.forward(g, store, t);
        if (dy || dx) t = shift_tokens(t, H, W, -dy, -dx);
        return t;
    }

    Var forward(Graph& g, ParamStore& store, const Var& deep_ir, const Var& deep_vi) const {
        const Tensor& a = deep_ir.value();
        a.require_rank(3, "cam_forward");
        if (a.shape() != deep_vi.value().shape()) throw ShapeError("cam_forward: modality feature shapes differ");
        if (a.dim(0) != layout_.dim) throw ShapeError("cam_forward: channel count != attention dim");
        const std::size_t H = a.dim(1), W = a.dim(2);
        Var ir = intra(g, store, Modality::ir, to_tokens(deep_ir), H, W);
        Var vi = intra(g, store, Modality::vi, to_tokens(deep_vi), H, W);
        for (std::size_t i = 0; i < layout_.ca_blocks; ++i) {
            Var next_ir = branch(Modality::ir).ca[i].forward(g, store, ir, vi);
            Var next_vi = branch(Modality::vi).ca[i].forward(g, store, vi, ir);
            ir = next_ir;
            vi = next_vi;
        }
        return from_tokens(add(ir, vi), H, W);
    }

    const CamLayout& layout() const { return layout_; }

    AttentionActivation ca_activation() const {
        return layout_.re_softmax ? AttentionActivation::reversed_softmax : AttentionActivation::softmax;
    }

private:
    struct Branch {
        std::vector<SABlock> sa_pre, sa_post;
        std::vector<CABlock> ca;
    };
    const Branch& branch(Modality m) const { return branches_[m == Modality::ir ? 0 : 1]; }

    std::string prefix_;
    CamLayout layout_;
    std::vector<Branch> branches_;
};

/// Four 3x3 convs on the concatenated deep features (ablation baseline).
class CnnFusion {
public:
    explicit CnnFusion(std::string prefix = "fusion_cnn", std::size_t d = kDeepChannels) : prefix_(std::move(prefix)), d_(d) {}

    void init(ParamStore& store, Rng& rng) const {
        for (std::size_t i = 0; i < 4; ++i) init_conv(store, name(i), i == 0 ? 2 * d_ : d_, d_, 3, rng);
    }

    Var forward(Graph& g, ParamStore& store, const Var& deep_ir, const Var& deep_vi) const {
        Var x = concat_channels({deep_ir, deep_vi});
        for (std::size_t i = 0; i < 4; ++i) {
            x = conv_layer(g, store, name(i), x);
            if (i + 1 < 4) x = relu(x);
        }
        return x;
    }

private:
    std::string name(std::size_t i) const { return prefix_ + ".conv" + std::to_string(i); }
    std::string prefix_;
    std::size_t d_;
};

/// One dense block plus one conv on the concatenated deep features (ablation baseline).
class DenseFusion {
public:
    explicit DenseFusion(std::string prefix = "fusion_dense", std::size_t d = kDeepChannels)
        : prefix_(std::move(prefix)), d_(d), block_(prefix_ + ".block", 2 * d, d) {}

    void init(ParamStore& store, Rng& rng) const {
        block_.init(store, rng);
        init_conv(store, prefix_ + ".conv", d_, d_, 3, rng);
    }

    Var forward(Graph& g, ParamStore& store, const Var& deep_ir, const Var& deep_vi) const {
        return conv_layer(g, store, prefix_ + ".conv", block_.forward(g, store, concat_channels({deep_ir, deep_vi})));
    }

private:
    std::string prefix_;
    std::size_t d_;
    DenseBlock block_;
};

}  // namespace xfuse
