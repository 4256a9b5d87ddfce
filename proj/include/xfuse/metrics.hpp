#pragma once

// Objective fusion-quality metrics on grayscale images with values in [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "xfuse/config.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

inline constexpr std::size_t kHistogramBins = 256;

/// round(v * 255), clamped to the 8-bit range.
inline std::size_t to_level(double v) {
    const double r = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<std::size_t>(r);
}

inline std::vector<std::size_t> to_levels(const Tensor& img) {
    std::vector<std::size_t> q(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) q[i] = to_level(img[i]);
    return q;
}

namespace detail {

inline double entropy_of_counts(const std::vector<double>& counts, double total) {
    double h = 0.0;
    for (double c : counts)
        if (c > 0.0) {
            const double p = c / total;
            h -= p * std::log2(p);
        }
    return h;
}

/// Mutual information and joint entropy (bits) of two label sequences.
struct JointInfo {
    double mi = 0.0;
    double joint_entropy = 0.0;
};

inline JointInfo joint_info(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t bins) {
    std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[a[i] * bins + b[i]] += 1.0;
        pa[a[i]] += 1.0;
        pb[b[i]] += 1.0;
    }
    const double n = double(a.size());
    JointInfo r;
    for (std::size_t i = 0; i < bins; ++i)
        for (std::size_t j = 0; j < bins; ++j) {
            const double c = joint[i * bins + j];
            if (c <= 0.0) continue;
            const double p = c / n;
            r.mi += p * std::log2(p * n * n / (pa[i] * pb[j]));
            r.joint_entropy -= p * std::log2(p);
        }
    return r;
}

}  // namespace detail

/// Shannon entropy (bits) of the 256-bin histogram of the 8-bit image.
inline double entropy(const Tensor& f) {
    if (f.empty()) throw ShapeError("entropy: empty image");
    std::vector<double> counts(kHistogramBins, 0.0);
    for (double v : f.data()) counts[to_level(v)] += 1.0;
    return detail::entropy_of_counts(counts, double(f.size()));
}

/// Population standard deviation of the 8-bit levels.
inline double std_dev(const Tensor& f) {
    if (f.empty()) throw ShapeError("std_dev: empty image");
    const auto q = to_levels(f);
    double m = 0.0;
    for (auto v : q) m += double(v);
    m /= double(q.size());
    double s = 0.0;
    for (auto v : q) s += (double(v) - m) * (double(v) - m);
    return std::sqrt(s / double(q.size()));
}

/// MI(F, A) + MI(F, B) over 256 x 256 joint histograms, in bits.
inline double mutual_info(const Tensor& f, const Tensor& a, const Tensor& b) {
    f.same_shape(a, "mutual_info");
    f.same_shape(b, "mutual_info");
    if (f.empty()) throw ShapeError("mutual_info: empty image");
    const auto qf = to_levels(f), qa = to_levels(a), qb = to_levels(b);
    return detail::joint_info(qf, qa, kHistogramBins).mi + detail::joint_info(qf, qb, kHistogramBins).mi;
}

// -------------------------------------------------------------------- FMI

enum class FmiFeature { dct, pixel };

inline constexpr std::size_t kFmiBins = 8;
inline constexpr std::size_t kFmiWindow = 16;
inline constexpr std::size_t kDctBlock = 8;

/// Magnitudes of the orthonormal 8 x 8 block DCT-II.
inline Tensor block_dct_magnitude(const Tensor& img) {
    img.require_rank(2, "block_dct");
    const std::size_t H = img.dim(0), W = img.dim(1), B = kDctBlock;
    if (H % B != 0 || W % B != 0)
        throw ShapeError("fmi(dct): image dimensions must be multiples of 8, got " + shape_string(img.shape()));
    std::array<double, kDctBlock * kDctBlock> basis{};
    for (std::size_t k = 0; k < B; ++k) {
        const double s = k == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
        for (std::size_t n = 0; n < B; ++n)
            basis[k * B + n] = s * std::cos(std::numbers::pi * (2.0 * double(n) + 1.0) * double(k) / (2.0 * B));
    }
    Tensor out(img.shape());
    std::array<double, kDctBlock * kDctBlock> tmp{};
    for (std::size_t by = 0; by < H; by += B)
        for (std::size_t bx = 0; bx < W; bx += B) {
            for (std::size_t u = 0; u < B; ++u)
                for (std::size_t x = 0; x < B; ++x) {
                    double s = 0.0;
                    for (std::size_t y = 0; y < B; ++y) s += basis[u * B + y] * img.at(by + y, bx + x);
                    tmp[u * B + x] = s;
                }
            for (std::size_t u = 0; u < B; ++u)
                for (std::size_t v = 0; v < B; ++v) {
                    double s = 0.0;
                    for (std::size_t x = 0; x < B; ++x) s += tmp[u * B + x] * basis[v * B + x];
                    out.at(by + u, bx + v) = std::abs(s);
                }
        }
    return out;
}

/// Uniform quantization of a feature image over its own [min, max].
inline std::vector<std::size_t> quantize_feature(const Tensor& feat, std::size_t bins = kFmiBins) {
    const auto [lo, hi] = std::minmax_element(feat.data().begin(), feat.data().end());
    std::vector<std::size_t> q(feat.size(), 0);
    const double range = *hi - *lo;
    if (!(range > 0.0)) return q;
    for (std::size_t i = 0; i < feat.size(); ++i) {
        const auto k = static_cast<std::size_t>((feat[i] - *lo) / range * double(bins));
        q[i] = std::min(k, bins - 1);
    }
    return q;
}

/// Quantizes block-DCT magnitudes separately per coefficient index, each
/// over its own [min, max] across blocks. A shared range would make the
/// DC/AC layout look like information common to any two images.
inline std::vector<std::size_t> quantize_dct_feature(const Tensor& mag, std::size_t bins = kFmiBins) {
    const std::size_t H = mag.dim(0), W = mag.dim(1), B = kDctBlock;
    std::vector<std::size_t> q(mag.size(), 0);
    for (std::size_t u = 0; u < B; ++u)
        for (std::size_t v = 0; v < B; ++v) {
            double lo = mag.at(u, v), hi = lo;
            for (std::size_t y = u; y < H; y += B)
                for (std::size_t x = v; x < W; x += B) {
                    lo = std::min(lo, mag.at(y, x));
                    hi = std::max(hi, mag.at(y, x));
                }
            const double range = hi - lo;
            if (!(range > 0.0)) continue;
            for (std::size_t y = u; y < H; y += B)
                for (std::size_t x = v; x < W; x += B)
                    q[y * W + x] = std::min(static_cast<std::size_t>((mag.at(y, x) - lo) / range * double(bins)), bins - 1);
        }
    return q;
}

/// Mean over non-overlapping windows of MI / H_joint between two quantized
/// feature images. Windows with zero joint entropy count as 1.
inline double regional_nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t H,
                           std::size_t W, std::size_t window = kFmiWindow, std::size_t bins = kFmiBins) {
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> wa, wb;
    for (std::size_t y0 = 0; y0 < H; y0 += window)
        for (std::size_t x0 = 0; x0 < W; x0 += window) {
            wa.clear();
            wb.clear();
            for (std::size_t y = y0; y < std::min(H, y0 + window); ++y)
                for (std::size_t x = x0; x < std::min(W, x0 + window); ++x) {
                    wa.push_back(a[y * W + x]);
                    wb.push_back(b[y * W + x]);
                }
            const auto j = detail::joint_info(wa, wb, bins);
            total += j.joint_entropy > 0.0 ? j.mi / j.joint_entropy : 1.0;
            ++count;
        }
    return total / double(count);
}

inline double fmi(const Tensor& f, const Tensor& a, const Tensor& b, FmiFeature feature) {
    f.require_rank(2, "fmi");
    f.same_shape(a, "fmi");
    f.same_shape(b, "fmi");
    auto features = [&](const Tensor& img) {
        return feature == FmiFeature::dct ? quantize_dct_feature(block_dct_magnitude(img)) : quantize_feature(img);
    };
    const auto qf = features(f), qa = features(a), qb = features(b);
    const std::size_t H = f.dim(0), W = f.dim(1);
    return 0.5 * (regional_nmi(qf, qa, H, W) + regional_nmi(qf, qb, H, W));
}

// -------------------------------------------------------------------- SCD

/// Pearson correlation; 0 when either operand has zero variance.
inline double correlation(const Tensor& x, const Tensor& y) {
    x.same_shape(y, "correlation");
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// corr(F - B, A) + corr(F - A, B).
inline double scd(const Tensor& f, const Tensor& a, const Tensor& b) {
    f.same_shape(a, "scd");
    f.same_shape(b, "scd");
    return correlation(f - b, a) + correlation(f - a, b);
}

// ----------------------------------------------------------------- report

struct MetricValues {
    double en = 0.0, sd = 0.0, mi = 0.0, fmi_dct = 0.0, fmi_pixel = 0.0, scd = 0.0;
};

inline MetricValues evaluate_metrics(const Tensor& fused, const Tensor& ir, const Tensor& vi) {
    return {entropy(fused),
            std_dev(fused),
            mutual_info(fused, ir, vi),
            fmi(fused, ir, vi, FmiFeature::dct),
            fmi(fused, ir, vi, FmiFeature::pixel),
            scd(fused, ir, vi)};
}

struct MetricReport {
    std::vector<std::pair<std::string, MetricValues>> rows;

    MetricValues mean() const {
        MetricValues m;
        if (rows.empty()) return m;
        for (const auto& [_, v] : rows) {
            m.en += v.en;
            m.sd += v.sd;
            m.mi += v.mi;
            m.fmi_dct += v.fmi_dct;
            m.fmi_pixel += v.fmi_pixel;
            m.scd += v.scd;
        }
        const double n = double(rows.size());
        return {m.en / n, m.sd / n, m.mi / n, m.fmi_dct / n, m.fmi_pixel / n, m.scd / n};
    }

    /// method,EN,SD,MI,FMI_dct,FMI_pixel,SCD with one row per pair and a
    /// final `mean` row. Numbers use the shortest round-trip form.
    std::string csv() const {
        std::string out = "method,EN,SD,MI,FMI_dct,FMI_pixel,SCD\n";
        auto row = [&](const std::string& name, const MetricValues& v) {
            out += name;
            for (double x : {v.en, v.sd, v.mi, v.fmi_dct, v.fmi_pixel, v.scd}) out += "," + detail::format_double(x);
            out += "\n";
        };
        for (const auto& [name, v] : rows) row(name, v);
        row("mean", mean());
        return out;
    }
};

}  // namespace xfuse
