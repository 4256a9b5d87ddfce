#pragma once

// Tensor-core primitives: forward kernels plus the adjoint kernels that the
// autograd layer composes. Everything here is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "xfuse/parallel.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

enum class Padding { valid, reflect, zero };

/// Convolution weights [out, in, kh, kw] plus one bias per output channel.
struct Kernel2D {
    Tensor weights;
    std::vector<double> bias;

    std::size_t out_channels() const { return weights.dim(0); }
    std::size_t in_channels() const { return weights.dim(1); }
    std::size_t kernel_h() const { return weights.dim(2); }
    std::size_t kernel_w() const { return weights.dim(3); }

    void validate() const {
        weights.require_rank(4, "Kernel2D");
        for (auto d : weights.shape())
            if (d == 0) throw ShapeError("Kernel2D: zero-sized dimension");
        if (bias.size() != out_channels()) throw ShapeError("Kernel2D: bias size != out channels");
    }
};

/// Mirror index without edge repetition (-1 -> 1, n -> n-2), periodic for
/// offsets larger than the extent.
inline std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

inline std::size_t wrap_index(long i, std::size_t n) {
    long m = i % static_cast<long>(n);
    if (m < 0) m += static_cast<long>(n);
    return static_cast<std::size_t>(m);
}

// ---------------------------------------------------------------- padding

inline Tensor pad2d(const Tensor& x, std::size_t p, Padding mode) {
    x.require_rank(3, "pad2d");
    if (p == 0 || mode == Padding::valid) return x;
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, H + 2 * p, W + 2 * p});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H + 2 * p; ++y) {
            const long sy = static_cast<long>(y) - static_cast<long>(p);
            for (std::size_t xx = 0; xx < W + 2 * p; ++xx) {
                const long sx = static_cast<long>(xx) - static_cast<long>(p);
                if (mode == Padding::reflect) {
                    out.at(c, y, xx) = x.at(c, reflect_index(sy, H), reflect_index(sx, W));
                } else if (sy >= 0 && sy < long(H) && sx >= 0 && sx < long(W)) {
                    out.at(c, y, xx) = x.at(c, std::size_t(sy), std::size_t(sx));
                }
            }
        }
    return out;
}

/// Adjoint of pad2d: folds padded gradients back onto the source grid.
inline Tensor pad2d_backward(const Tensor& g, std::size_t H, std::size_t W, std::size_t p, Padding mode) {
    if (p == 0 || mode == Padding::valid) return g;
    const std::size_t C = g.dim(0);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H + 2 * p; ++y) {
            const long sy = static_cast<long>(y) - static_cast<long>(p);
            for (std::size_t xx = 0; xx < W + 2 * p; ++xx) {
                const long sx = static_cast<long>(xx) - static_cast<long>(p);
                if (mode == Padding::reflect) {
                    out.at(c, reflect_index(sy, H), reflect_index(sx, W)) += g.at(c, y, xx);
                } else if (sy >= 0 && sy < long(H) && sx >= 0 && sx < long(W)) {
                    out.at(c, std::size_t(sy), std::size_t(sx)) += g.at(c, y, xx);
                }
            }
        }
    return out;
}

// ------------------------------------------------------------ convolution

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
    if (in < k) return 0;
    return (in - k) / stride + 1;
}

namespace detail {

// Stride-1 square-kernel correlation with the taps unrolled at compile time,
// so each output element is loaded and stored once per input channel.
template <std::size_t K>
void conv_forward_k(const double* xd, const double* wd, std::span<const double> bias, double* od, std::size_t C,
                    std::size_t H, std::size_t W, std::size_t O) {
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    parallel_for(O, [&](std::size_t o) {
        double* oplane = od + o * OH * OW;
        const double b = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < OH * OW; ++i) oplane[i] = b;
        for (std::size_t c = 0; c < C; ++c) {
            const double* iplane = xd + c * H * W;
            double wk[K * K];
            for (std::size_t t = 0; t < K * K; ++t) wk[t] = wd[(o * C + c) * K * K + t];
            for (std::size_t y = 0; y < OH; ++y) {
                double* orow = oplane + y * OW;
                const double* base = iplane + y * W;
                for (std::size_t xx = 0; xx < OW; ++xx) {
                    double s = orow[xx];
                    for (std::size_t ky = 0; ky < K; ++ky)
                        for (std::size_t kx = 0; kx < K; ++kx) s += wk[ky * K + kx] * base[ky * W + xx + kx];
                    orow[xx] = s;
                }
            }
        }
    });
}

template <std::size_t K>
void conv_weight_grad_k(const double* xd, const double* gd, double* gw, std::size_t C, std::size_t H, std::size_t W,
                        std::size_t O) {
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    parallel_for(O, [&](std::size_t o) {
        const double* gplane = gd + o * OH * OW;
        std::vector<double> lanes(K * K * OW);
        for (std::size_t c = 0; c < C; ++c) {
            const double* iplane = xd + c * H * W;
            std::fill(lanes.begin(), lanes.end(), 0.0);
            double* lane = lanes.data();
            for (std::size_t y = 0; y < OH; ++y) {
                const double* grow = gplane + y * OW;
                const double* base = iplane + y * W;
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        double* l = lane + (ky * K + kx) * OW;
                        const double* irow = base + ky * W + kx;
                        for (std::size_t xx = 0; xx < OW; ++xx) l[xx] += grow[xx] * irow[xx];
                    }
            }
            for (std::size_t t = 0; t < K * K; ++t) {
                double acc = 0.0;
                for (std::size_t xx = 0; xx < OW; ++xx) acc += lane[t * OW + xx];
                gw[(o * C + c) * K * K + t] = acc;
            }
        }
    });
}

template <class F>
bool dispatch_kernel_size(std::size_t k, F&& f) {
    switch (k) {
        case 1: f(std::integral_constant<std::size_t, 1>{}); return true;
        case 3: f(std::integral_constant<std::size_t, 3>{}); return true;
        case 11: f(std::integral_constant<std::size_t, 11>{}); return true;
        default: return false;
    }
}

}  // namespace detail

/// Unpadded cross-correlation. x: [C,H,W], w: [O,C,kh,kw].
inline Tensor conv2d_valid(const Tensor& x, const Tensor& w, std::span<const double> bias, std::size_t stride = 1) {
    x.require_rank(3, "conv2d");
    w.require_rank(4, "conv2d weights");
    if (stride == 0) throw ArgumentError("conv2d: stride must be >= 1");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
    if (!bias.empty() && bias.size() != O) throw ShapeError("conv2d: bias size mismatch");
    const std::size_t OH = conv_out_extent(H, kh, stride), OW = conv_out_extent(W, kw, stride);
    if (OH == 0 || OW == 0) throw ShapeError("conv2d: empty spatial output for input " + shape_string(x.shape()));

    Tensor out({O, OH, OW});
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* od = out.data().data();
    if (stride == 1 && kh == kw &&
        detail::dispatch_kernel_size(kh, [&](auto k) { detail::conv_forward_k<k()>(xd, wd, bias, od, C, H, W, O); }))
        return out;
    parallel_for(O, [&](std::size_t o) {
        double* oplane = od + o * OH * OW;
        const double b = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < OH * OW; ++i) oplane[i] = b;
        for (std::size_t c = 0; c < C; ++c) {
            const double* iplane = xd + c * H * W;
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = wd[((o * C + c) * kh + ky) * kw + kx];
                    if (wv == 0.0) continue;
                    for (std::size_t y = 0; y < OH; ++y) {
                        const double* irow = iplane + (y * stride + ky) * W + kx;
                        double* orow = oplane + y * OW;
                        if (stride == 1) {
                            for (std::size_t xx = 0; xx < OW; ++xx) orow[xx] += wv * irow[xx];
                        } else {
                            for (std::size_t xx = 0; xx < OW; ++xx) orow[xx] += wv * irow[xx * stride];
                        }
                    }
                }
        }
    });
    return out;
}

struct ConvGrads {
    Tensor input;
    Tensor weight;
    std::vector<double> bias;
};

inline ConvGrads conv2d_valid_backward(const Tensor& x, const Tensor& w, const Tensor& gout, std::size_t stride,
                                       bool need_input, bool need_weight) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t OH = gout.dim(1), OW = gout.dim(2);
    ConvGrads g;
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* gd = gout.data().data();
    if (stride == 1 && kh == kw && (kh == 1 || kh == 3 || kh == 11)) {
        if (need_weight) {
            g.weight = Tensor(w.shape());
            g.bias.assign(O, 0.0);
            for (std::size_t o = 0; o < O; ++o) {
                double bsum = 0.0;
                for (std::size_t i = 0; i < OH * OW; ++i) bsum += gd[o * OH * OW + i];
                g.bias[o] = bsum;
            }
            double* gw = g.weight.data().data();
            detail::dispatch_kernel_size(kh, [&](auto k) { detail::conv_weight_grad_k<k()>(xd, gd, gw, C, H, W, O); });
        }
        if (need_input) {
            // Full correlation of the zero-extended gradient with the
            // flipped, channel-transposed kernel.
            const std::size_t k = kh, PH = OH + 2 * (k - 1), PW = OW + 2 * (k - 1);
            Tensor padded({O, PH, PW});
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t y = 0; y < OH; ++y)
                    std::copy_n(gd + (o * OH + y) * OW, OW, padded.data().data() + (o * PH + y + k - 1) * PW + k - 1);
            Tensor flipped({C, O, k, k});
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t t = 0; t < k * k; ++t)
                        flipped[(c * O + o) * k * k + (k * k - 1 - t)] = wd[(o * C + c) * k * k + t];
            g.input = conv2d_valid(padded, flipped, {}, 1);
        }
        return g;
    }
    if (need_weight) {
        g.weight = Tensor(w.shape());
        g.bias.assign(O, 0.0);
        double* gw = g.weight.data().data();
        parallel_for(O, [&](std::size_t o) {
            const double* gplane = gd + o * OH * OW;
            double bsum = 0.0;
            for (std::size_t i = 0; i < OH * OW; ++i) bsum += gplane[i];
            g.bias[o] = bsum;
            // Per-column partial sums keep the inner loop free of a serial
            // reduction; lanes are folded in a fixed order afterwards.
            std::vector<double> lanes(OW);
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = xd + c * H * W;
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        std::fill(lanes.begin(), lanes.end(), 0.0);
                        double* lane = lanes.data();
                        for (std::size_t y = 0; y < OH; ++y) {
                            const double* irow = iplane + (y * stride + ky) * W + kx;
                            const double* grow = gplane + y * OW;
                            if (stride == 1) {
                                for (std::size_t xx = 0; xx < OW; ++xx) lane[xx] += grow[xx] * irow[xx];
                            } else {
                                for (std::size_t xx = 0; xx < OW; ++xx) lane[xx] += grow[xx] * irow[xx * stride];
                            }
                        }
                        double acc = 0.0;
                        for (double v : lanes) acc += v;
                        gw[((o * C + c) * kh + ky) * kw + kx] = acc;
                    }
            }
        });
    }
    if (need_input) {
        g.input = Tensor(x.shape());
        double* gi = g.input.data().data();
        parallel_for(C, [&](std::size_t c) {
            double* iplane = gi + c * H * W;
            for (std::size_t o = 0; o < O; ++o) {
                const double* gplane = gd + o * OH * OW;
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double wv = wd[((o * C + c) * kh + ky) * kw + kx];
                        if (wv == 0.0) continue;
                        for (std::size_t y = 0; y < OH; ++y) {
                            double* irow = iplane + (y * stride + ky) * W + kx;
                            const double* grow = gplane + y * OW;
                            for (std::size_t xx = 0; xx < OW; ++xx) irow[xx * stride] += wv * grow[xx];
                        }
                    }
            }
        });
    }
    return g;
}

/// Convolution with explicit padding mode. Same-size modes pad by k/2 and
/// therefore require odd kernels.
inline Tensor conv2d(const Tensor& input, const Kernel2D& kernel, std::size_t stride = 1,
                     Padding padding = Padding::valid) {
    kernel.validate();
    input.require_rank(3, "conv2d");
    if (input.dim(0) != kernel.in_channels())
        throw ShapeError("conv2d: channel mismatch " + std::to_string(input.dim(0)) + " vs " +
                         std::to_string(kernel.in_channels()));
    std::size_t p = 0;
    if (padding != Padding::valid) {
        if (kernel.kernel_h() % 2 == 0 || kernel.kernel_w() % 2 == 0 || kernel.kernel_h() != kernel.kernel_w())
            throw ShapeError("conv2d: same padding requires square odd kernels");
        p = kernel.kernel_h() / 2;
    }
    return conv2d_valid(pad2d(input, p, padding), kernel.weights, kernel.bias, stride);
}

// ---------------------------------------------------------- pooling / resize

struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

inline PoolResult maxpool2_indexed(const Tensor& x) {
    x.require_rank(3, "maxpool2");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 || W % 2) throw ShapeError("maxpool2: spatial dims must be even, got " + shape_string(x.shape()));
    PoolResult r{Tensor({C, H / 2, W / 2}), std::vector<std::size_t>(C * H * W / 4)};
    std::size_t k = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
            for (std::size_t xx = 0; xx < W / 2; ++xx, ++k) {
                std::size_t best = (c * H + 2 * y) * W + 2 * xx;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (c * H + 2 * y + dy) * W + 2 * xx + dx;
                        if (x[idx] > x[best]) best = idx;  // first maximum wins ties
                    }
                r.output[k] = x[best];
                r.argmax[k] = best;
            }
    return r;
}

inline Tensor maxpool2(const Tensor& x) { return maxpool2_indexed(x).output; }

inline Tensor maxpool2_backward(const Tensor& g, std::span<const std::size_t> argmax, const Shape& in_shape) {
    Tensor out(in_shape);
    for (std::size_t k = 0; k < argmax.size(); ++k) out[argmax[k]] += g[k];
    return out;
}

inline Tensor upsample2(const Tensor& x) {
    x.require_rank(3, "upsample2");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
    return out;
}

inline Tensor upsample2_backward(const Tensor& g) {
    const std::size_t C = g.dim(0), H = g.dim(1) / 2, W = g.dim(2) / 2;
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) out.at(c, y / 2, xx / 2) += g.at(c, y, xx);
    return out;
}

// ------------------------------------------------------------ mean filter

namespace detail {
// Box sum over a k x k window of an already padded map (valid output).
inline Tensor box_sum_valid(const Tensor& padded, std::size_t k) {
    const std::size_t C = padded.dim(0), PH = padded.dim(1), PW = padded.dim(2);
    const std::size_t OH = PH - k + 1, OW = PW - k + 1;
    Tensor out({C, OH, OW});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x = 0; x < OW; ++x) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < k; ++dy)
                    for (std::size_t dx = 0; dx < k; ++dx) s += padded.at(c, y + dy, x + dx);
                out.at(c, y, x) = s;
            }
    return out;
}

inline Tensor box_sum_valid_backward(const Tensor& g, std::size_t k) {
    const std::size_t C = g.dim(0), OH = g.dim(1), OW = g.dim(2);
    Tensor out({C, OH + k - 1, OW + k - 1});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x = 0; x < OW; ++x) {
                const double v = g.at(c, y, x);
                for (std::size_t dy = 0; dy < k; ++dy)
                    for (std::size_t dx = 0; dx < k; ++dx) out.at(c, y + dy, x + dx) += v;
            }
    return out;
}

// Box mean of a padded map. Sums run on offsets from each channel's first
// value, so constant channels come back bit-exact.
inline Tensor box_mean_valid(Tensor padded, std::size_t k) {
    if (k == 1) return padded;
    const std::size_t C = padded.dim(0), plane = padded.dim(1) * padded.dim(2);
    std::vector<double> ref(C);
    for (std::size_t c = 0; c < C; ++c) {
        ref[c] = padded[c * plane];
        for (std::size_t i = 0; i < plane; ++i) padded[c * plane + i] -= ref[c];
    }
    Tensor out = box_sum_valid(padded, k);
    out *= 1.0 / double(k * k);
    const std::size_t oplane = out.dim(1) * out.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < oplane; ++i) out[c * oplane + i] += ref[c];
    return out;
}

inline void check_mean_filter(const Tensor& t, std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ArgumentError("mean_filter: kernel size must be odd, got " + std::to_string(k));
    if (k > std::min(height(t), width(t)))
        throw ArgumentError("mean_filter: kernel size " + std::to_string(k) + " exceeds image extent");
}

// Reflect-padded box mean; only needs the padding to fit inside the image.
inline Tensor reflect_box_mean(const Tensor& image, std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ArgumentError("mean_filter: kernel size must be odd, got " + std::to_string(k));
    if (k / 2 >= std::min(height(image), width(image)))
        throw ArgumentError("mean_filter: kernel size " + std::to_string(k) + " too large for reflect padding");
    const Tensor x = image.rank() == 2 ? as_feature_map(image) : image;
    Tensor out = box_mean_valid(pad2d(x, k / 2, Padding::reflect), k);
    return image.rank() == 2 ? as_image(out) : out;
}
}  // namespace detail

/// k x k box mean per channel with reflect padding; accepts H x W or C x H x W.
inline Tensor mean_filter(const Tensor& image, std::size_t k) {
    detail::check_mean_filter(image, k);
    return detail::reflect_box_mean(image, k);
}

inline Tensor mean_filter_backward(const Tensor& g, std::size_t k) {
    const Tensor gm = g.rank() == 2 ? as_feature_map(g) : g;
    Tensor padded_grad = detail::box_sum_valid_backward(gm, k);
    padded_grad *= 1.0 / double(k * k);
    Tensor out = pad2d_backward(padded_grad, gm.dim(1), gm.dim(2), k / 2, Padding::reflect);
    return g.rank() == 2 ? as_image(out) : out;
}

// ---------------------------------------------------------- cyclic shift

/// Torus translation: out[y][x] = in[y - dy][x - dx] (indices mod H, W).
inline Tensor cyclic_shift(const Tensor& map, long dy, long dx) {
    const Tensor x = map.rank() == 2 ? as_feature_map(map) : map;
    x.require_rank(3, "cyclic_shift");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out(x.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            const std::size_t sy = wrap_index(long(y) - dy, H);
            for (std::size_t xx = 0; xx < W; ++xx) out.at(c, y, xx) = x.at(c, sy, wrap_index(long(xx) - dx, W));
        }
    return map.rank() == 2 ? as_image(out) : out;
}

// --------------------------------------------------------- dense algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul lhs");
    b.require_rank(2, "matmul rhs");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dims differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out({n, m});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    parallel_for(n, [&](std::size_t i) {
        double* orow = od + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            const double* brow = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    });
    return out;
}

inline Tensor transpose(const Tensor& a) {
    a.require_rank(2, "transpose");
    const std::size_t n = a.dim(0), m = a.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

/// Max-subtracted softmax over each row.
inline Tensor rowwise_softmax(const Tensor& x) {
    x.require_rank(2, "rowwise_softmax");
    const std::size_t n = x.dim(0), m = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x.at(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += out.at(i, j) = std::exp(x.at(i, j) - mx);
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= s;
    }
    return out;
}

/// Reversed softmax: softmax of the negated scores, so the least similar key
/// receives the largest weight.
inline Tensor re_softmax(const Tensor& x) { return rowwise_softmax(x * -1.0); }

/// dL/dx for y = softmax(x) given dL/dy.
inline Tensor rowwise_softmax_backward(const Tensor& y, const Tensor& g) {
    const std::size_t n = y.dim(0), m = y.dim(1);
    Tensor out(y.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
    }
    return out;
}

inline constexpr double kLayerNormEps = 1e-6;

struct LayerNormCache {
    Tensor normalized;             // (x - mean) / sqrt(var + eps), before affine
    std::vector<double> inv_std;   // per row
};

inline LayerNormCache layer_norm_normalize(const Tensor& x, double eps = kLayerNormEps) {
    x.require_rank(2, "layer_norm");
    const std::size_t n = x.dim(0), d = x.dim(1);
    LayerNormCache c{Tensor(x.shape()), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x.at(i, j);
        mu /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
        var /= double(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        c.inv_std[i] = inv;
        for (std::size_t j = 0; j < d; ++j) c.normalized.at(i, j) = (x.at(i, j) - mu) * inv;
    }
    return c;
}

/// Per-token normalization with affine gamma/beta (each of length d).
inline Tensor layer_norm(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                         double eps = kLayerNormEps) {
    LayerNormCache c = layer_norm_normalize(x, eps);
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm: affine size mismatch");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) c.normalized.at(i, j) = c.normalized.at(i, j) * gamma[j] + beta[j];
    return c.normalized;
}

/// Gradient wrt x of the normalization step, given dL/d(normalized).
inline Tensor layer_norm_backward(const LayerNormCache& c, const Tensor& g_norm) {
    const std::size_t n = g_norm.dim(0), d = g_norm.dim(1);
    Tensor out(g_norm.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double sg = 0.0, sgx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            sg += g_norm.at(i, j);
            sgx += g_norm.at(i, j) * c.normalized.at(i, j);
        }
        sg /= double(d);
        sgx /= double(d);
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = c.inv_std[i] * (g_norm.at(i, j) - sg - c.normalized.at(i, j) * sgx);
    }
    return out;
}

// ------------------------------------------------------------ pointwise

template <class Fn>
Tensor map(const Tensor& x, Fn&& fn) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
    return out;
}

inline Tensor relu(const Tensor& x) {
    return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

inline double sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    return map(x, [](double v) { return sigmoid(v); });
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline double gelu_derivative(double v) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
}

/// Feature map C x H x W -> token matrix (H*W) x C, row-major over (H, W).
inline Tensor to_tokens(const Tensor& map) {
    map.require_rank(3, "to_tokens");
    const std::size_t C = map.dim(0), HW = map.dim(1) * map.dim(2);
    Tensor out({HW, C});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < HW; ++t) out.at(t, c) = map[c * HW + t];
    return out;
}

inline Tensor from_tokens(const Tensor& tokens, std::size_t H, std::size_t W) {
    tokens.require_rank(2, "from_tokens");
    if (tokens.dim(0) != H * W) throw ShapeError("from_tokens: token count != H*W");
    const std::size_t C = tokens.dim(1);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < H * W; ++t) out[c * H * W + t] = tokens.at(t, c);
    return out;
}

}  // namespace xfuse
