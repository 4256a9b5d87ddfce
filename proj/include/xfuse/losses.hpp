#pragma once

// Training objectives. Squared Frobenius norms are taken as means over pixels
// so the weights stay meaningful across image sizes.

#include <cmath>

#include "xfuse/autograd.hpp"
#include "xfuse/config.hpp"

namespace xfuse {

struct LossWeights {
    double ssim = 1e4;
    double grad = 10.0;

    static LossWeights from_config(const FuseConfig& c) { return {c.w_ssim, c.w_grad}; }
};

// ------------------------------------------------------------------ SSIM

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized 11 x 11 Gaussian window (sigma 1.5) as a [1,1,11,11] kernel.
inline Tensor ssim_window() {
    std::array<double, kSsimWindow> g{};
    double s = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = double(i) - double(kSsimWindow / 2);
        s += g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    }
    Tensor w({1, 1, kSsimWindow, kSsimWindow});
    for (std::size_t y = 0; y < kSsimWindow; ++y)
        for (std::size_t x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x] / (s * s);
    return w;
}

/// Mean single-scale SSIM over all fully covered 11 x 11 windows. Dynamic
/// range 1; inputs are H x W images.
inline Var ssim(const Var& a, const Var& b) {
    a.value().require_rank(2, "ssim");
    a.value().same_shape(b.value(), "ssim");
    if (a.value().dim(0) < kSsimWindow || a.value().dim(1) < kSsimWindow)
        throw ShapeError("ssim: images must be at least 11 x 11, got " + shape_string(a.value().shape()));
    Graph& g = a.graph();
    const Var window = g.constant(ssim_window());
    const Var zero = g.constant(Tensor({1}));
    auto blur = [&](const Var& x) { return conv2d_valid(x, window, zero); };
    const Shape fm{1, a.value().dim(0), a.value().dim(1)};
    const Var x = reshape(a, fm), y = reshape(b, fm);

    const Var mu_x = blur(x), mu_y = blur(y);
    const Var mu_xx = mul(mu_x, mu_x), mu_yy = mul(mu_y, mu_y), mu_xy = mul(mu_x, mu_y);
    const Var var_x = sub(blur(mul(x, x)), mu_xx);
    const Var var_y = sub(blur(mul(y, y)), mu_yy);
    const Var cov = sub(blur(mul(x, y)), mu_xy);
    const Var num = mul(affine(mu_xy, 2.0, kSsimC1), affine(cov, 2.0, kSsimC2));
    const Var den = mul(affine(add(mu_xx, mu_yy), 1.0, kSsimC1), affine(add(var_x, var_y), 1.0, kSsimC2));
    return mean(div(num, den));
}

inline double ssim(const Tensor& a, const Tensor& b) {
    Graph g(false);
    return ssim(g.constant(a), g.constant(b)).value()[0];
}

// ------------------------------------------------------- autoencoder loss

struct AutoLoss {
    Var total;
    Var mse;
    Var ssim_term;  // w_s * (1 - SSIM)
};

/// MSE(I, I_r) + w_s * (1 - SSIM(I, I_r)).
inline AutoLoss loss_auto(const Var& target, const Var& reconstruction, const LossWeights& w) {
    AutoLoss l;
    l.mse = mse(reconstruction, target);
    l.ssim_term = affine(ssim(target, reconstruction), -w.ssim, w.ssim);
    l.total = add(l.mse, l.ssim_term);
    return l;
}

inline double loss_auto(const Tensor& target, const Tensor& reconstruction, const LossWeights& w = {}) {
    Graph g(false);
    return loss_auto(g.constant(target), g.constant(reconstruction), w).total.value()[0];
}

// ------------------------------------------------------------ fusion loss

inline constexpr std::size_t kMaskKernel = 11;
inline constexpr std::size_t kGradKernel = 3;
inline constexpr double kLocDenominatorFloor = 1e-12;

struct IntensityMasks {
    Tensor ir;  // 1 where the infrared local mean share is >= the visible one
    Tensor vi;  // 1 - ir
};

inline IntensityMasks intensity_masks(const Tensor& ir, const Tensor& vi) {
    ir.require_rank(2, "intensity_masks");
    ir.same_shape(vi, "intensity_masks");
    // Images narrower than the kernel still work as long as the reflection fits.
    const Tensor avg_ir = detail::reflect_box_mean(ir, kMaskKernel);
    const Tensor avg_vi = detail::reflect_box_mean(vi, kMaskKernel);
    IntensityMasks m{Tensor(ir.shape()), Tensor(ir.shape())};
    for (std::size_t i = 0; i < ir.size(); ++i) {
        const double s = avg_ir[i] + avg_vi[i];
        double loc_ir = 0.5, loc_vi = 0.5;
        if (s >= kLocDenominatorFloor) {
            loc_ir = avg_ir[i] / s;
            loc_vi = avg_vi[i] / s;
        }
        m.ir[i] = loc_ir >= loc_vi ? 1.0 : 0.0;
        m.vi[i] = 1.0 - m.ir[i];
    }
    return m;
}

/// M_ir * I_ir + M_vi * I_vi.
inline Tensor intensity_target(const Tensor& ir, const Tensor& vi) {
    const IntensityMasks m = intensity_masks(ir, vi);
    Tensor t(ir.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = m.ir[i] * ir[i] + m.vi[i] * vi[i];
    return t;
}

/// max(Clip(mean3(I_ir)), Clip(mean3(I_vi))).
inline Tensor gradient_target(const Tensor& ir, const Tensor& vi) {
    ir.same_shape(vi, "gradient_target");
    const Tensor b_ir = mean_filter(ir, kGradKernel), b_vi = mean_filter(vi, kGradKernel);
    Tensor t(ir.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::max(std::max(b_ir[i], 0.0), std::max(b_vi[i], 0.0));
    return t;
}

inline Var loss_int(const Var& fused, const Tensor& ir, const Tensor& vi) {
    return mse(fused, fused.graph().constant(intensity_target(ir, vi)));
}

inline Var loss_gra(const Var& fused, const Tensor& ir, const Tensor& vi) {
    return mse(fused, fused.graph().constant(gradient_target(ir, vi)));
}

struct CamLoss {
    Var total;
    Var intensity;
    Var gradient;
};

/// L_int + w_g * L_gra.
inline CamLoss loss_cam(const Var& fused, const Tensor& ir, const Tensor& vi, const LossWeights& w) {
    CamLoss l;
    l.intensity = loss_int(fused, ir, vi);
    l.gradient = loss_gra(fused, ir, vi);
    l.total = add(l.intensity, scale(l.gradient, w.grad));
    return l;
}

inline double loss_int(const Tensor& fused, const Tensor& ir, const Tensor& vi) {
    Graph g(false);
    return loss_int(g.constant(fused), ir, vi).value()[0];
}

inline double loss_gra(const Tensor& fused, const Tensor& ir, const Tensor& vi) {
    Graph g(false);
    return loss_gra(g.constant(fused), ir, vi).value()[0];
}

inline double loss_cam(const Tensor& fused, const Tensor& ir, const Tensor& vi, const LossWeights& w = {}) {
    Graph g(false);
    return loss_cam(g.constant(fused), ir, vi, w).total.value()[0];
}

}  // namespace xfuse
