#pragma once

// Image reconstructor with intensity-aware skip fusion at the deep and the
// shallow level:
//
//   Phi_df = Phi_c + w_ir * Phi_ir + w_vi * Phi_vi,  w_c = nabla(Phi_c') / sum nabla
//
// where nabla is a 3x3 box mean at the deep level (base information) and
// |1 - box mean| at the shallow level (detail information).

#include <array>
#include <string>

#include "xfuse/encoder.hpp"
#include "xfuse/layers.hpp"

namespace xfuse {

enum class SkipLevel { deep, shallow };

inline constexpr std::size_t kNablaKernel = 3;
/// Below this denominator both skip weights fall back to 0.5.
inline constexpr double kWeightDenominatorFloor = 1e-12;

struct SkipBundle {
    Var ir;
    Var vi;
};

namespace detail {
// 3x3 reflect-padded mean; defined for maps as small as 2 x 2.
inline Tensor nabla_mean(const Tensor& phi) {
    const Tensor x = phi.rank() == 2 ? as_feature_map(phi) : phi;
    Tensor out = box_mean_valid(pad2d(x, kNablaKernel / 2, Padding::reflect), kNablaKernel);
    return phi.rank() == 2 ? as_image(out) : out;
}

inline Var nabla_mean(const Var& phi) {
    return phi.graph().record(nabla_mean(phi.value()), {phi}, [phi](Graph& g, const Tensor& go) {
        g.accumulate(phi, mean_filter_backward(go, kNablaKernel));
    });
}
}  // namespace detail

inline Tensor nabla(const Tensor& phi, SkipLevel level) {
    Tensor base = detail::nabla_mean(phi);
    if (level == SkipLevel::deep) return base;
    return map(base, [](double v) { return std::abs(1.0 - v); });
}

inline Var nabla(const Var& phi, SkipLevel level) {
    Var base = detail::nabla_mean(phi);
    if (level == SkipLevel::deep) return base;
    return abs(affine(base, -1.0, 1.0));
}

/// w = max(a,0) / (max(a,0) + max(b,0)) elementwise; 0.5 where the
/// denominator is below kWeightDenominatorFloor.
inline Tensor intensity_weight(const Tensor& a, const Tensor& b) {
    a.same_shape(b, "intensity_weight");
    Tensor w(a.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double pa = std::max(a[i], 0.0), pb = std::max(b[i], 0.0);
        const double s = pa + pb;
        w[i] = s < kWeightDenominatorFloor ? 0.5 : pa / s;
    }
    return w;
}

inline Var intensity_weight(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    std::vector<bool> branch(3 * av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        branch[3 * i] = av[i] > 0.0;
        branch[3 * i + 1] = bv[i] > 0.0;
        branch[3 * i + 2] = std::max(av[i], 0.0) + std::max(bv[i], 0.0) < kWeightDenominatorFloor;
    }
    a.graph().note_branch(detail::hash_bools(branch));
    return a.graph().record(intensity_weight(av, bv), {a, b}, [a, b](Graph& g, const Tensor& go) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        Tensor ga(av.shape()), gb(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double pa = std::max(av[i], 0.0), pb = std::max(bv[i], 0.0);
            const double s = pa + pb;
            if (s < kWeightDenominatorFloor) continue;
            if (av[i] > 0.0) ga[i] = go[i] * pb / (s * s);
            if (bv[i] > 0.0) gb[i] = -go[i] * pa / (s * s);
        }
        g.accumulate(a, ga);
        g.accumulate(b, gb);
    });
}

struct SkipWeights {
    Tensor ir;
    Tensor vi;
};

inline SkipWeights skip_weights(const Tensor& phi_ir, const Tensor& phi_vi, SkipLevel level) {
    const Tensor n_ir = nabla(phi_ir, level), n_vi = nabla(phi_vi, level);
    return {intensity_weight(n_ir, n_vi), intensity_weight(n_vi, n_ir)};
}

inline Var skip_fuse(const Var& phi_c, const SkipBundle& bundle, SkipLevel level) {
    const Shape& s = phi_c.value().shape();
    if (bundle.ir.value().shape() != s || bundle.vi.value().shape() != s)
        throw ShapeError("skip_fuse: feature shapes differ at the " +
                         std::string(level == SkipLevel::deep ? "deep" : "shallow") + " level");
    Var n_ir = nabla(bundle.ir, level);
    Var n_vi = nabla(bundle.vi, level);
    Var w_ir = intensity_weight(n_ir, n_vi);
    Var w_vi = intensity_weight(n_vi, n_ir);
    return add(add(phi_c, mul(w_ir, bundle.ir)), mul(w_vi, bundle.vi));
}

inline Tensor skip_fuse(const Tensor& phi_c, const Tensor& phi_ir, const Tensor& phi_vi, SkipLevel level) {
    Graph g(false);
    return skip_fuse(g.constant(phi_c), {g.constant(phi_ir), g.constant(phi_vi)}, level).value();
}

inline constexpr std::array<std::size_t, 3> kDecoderChannels{32, 16, 16};

class Decoder {
public:
    explicit Decoder(std::string prefix) : prefix_(std::move(prefix)) {}

    const std::string& prefix() const { return prefix_; }

    void init(ParamStore& store, Rng& rng) const {
        std::size_t in = kDeepChannels;
        for (std::size_t i = 0; i < kDecoderChannels.size(); ++i) {
            init_conv(store, stage_name(i), in, kDecoderChannels[i], 3, rng);
            in = kDecoderChannels[i];
        }
        init_conv(store, prefix_ + ".out", in, 1, 3, rng);
    }

    /// Returns a 1 x H x W image in (0, 1).
    Var forward(Graph& g, ParamStore& store, const Var& fused_deep, const SkipBundle& deep,
                const SkipBundle& shallow) const {
        fused_deep.value().require_rank(3, "decode");
        if (fused_deep.value().dim(0) != kDeepChannels) throw ShapeError("decode: fused feature channel mismatch");
        Var x = skip_fuse(fused_deep, deep, SkipLevel::deep);
        for (std::size_t i = 0; i < kDecoderChannels.size(); ++i)
            x = relu(conv_layer(g, store, stage_name(i), upsample2(x)));
        x = skip_fuse(x, shallow, SkipLevel::shallow);
        return sigmoid(conv_layer(g, store, prefix_ + ".out", x));
    }

private:
    std::string stage_name(std::size_t i) const { return prefix_ + ".up" + std::to_string(i); }
    std::string prefix_;
};

}  // namespace xfuse
