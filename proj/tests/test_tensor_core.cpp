#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xfuse/ops.hpp"

using namespace xfuse;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (double& v : t.data()) v = u(rng);
    return t;
}

Tensor iota_map(std::size_t C, std::size_t H, std::size_t W, double start = 1.0, double step = 1.0) {
    Tensor t({C, H, W});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + step * double(i);
    return t;
}

// Straightforward nested-loop correlation used as the oracle for the
// optimized kernels.
Tensor naive_conv(const Tensor& x, const Tensor& w, const std::vector<double>& b) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    Tensor out({O, H - kh + 1, W - kw + 1});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t y = 0; y + kh <= H; ++y)
            for (std::size_t xx = 0; xx + kw <= W; ++xx) {
                double s = b.empty() ? 0.0 : b[o];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) s += w[((o * C + c) * kh + i) * kw + j] * x.at(c, y + i, xx + j);
                out.at(o, y, xx) = s;
            }
    return out;
}

}  // namespace

// ------------------------------------------------------------------ tensor

TEST(Tensor, ShapeAndDataMustAgree) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.at(1, 2), 6.0);
    EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, CheckedRejectsNonFinite) {
    EXPECT_THROW(Tensor::checked({2}, {1.0, std::nan("")}), ArgumentError);
    EXPECT_THROW(Tensor::checked({1}, {INFINITY}), ArgumentError);
    EXPECT_NO_THROW(Tensor::checked({2}, {1.0, -2.0}));
}

TEST(Tensor, ReshapeKeepsData) {
    Tensor t = iota_map(1, 2, 3);
    Tensor r = t.reshaped({3, 2});
    EXPECT_EQ(r.storage(), t.storage());
    EXPECT_THROW(t.reshaped({4}), ShapeError);
}

// ------------------------------------------------------------------ conv2d

TEST(Conv2d, ZeroInputZeroBiasGivesZero) {
    Kernel2D k{random_tensor({1, 1, 3, 3}, 1), {0.0}};
    Tensor out = conv2d(Tensor({1, 3, 3}), k, 1, Padding::valid);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
    EXPECT_EQ(out[0], 0.0);
    Tensor same = conv2d(Tensor({1, 3, 3}), k, 1, Padding::reflect);
    for (double v : same.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, IdentityKernel) {
    Kernel2D k{Tensor({1, 1, 1, 1}, 1.0), {0.0}};
    Tensor x = random_tensor({1, 5, 4}, 2);
    EXPECT_EQ(conv2d(x, k), x);
}

TEST(Conv2d, BoxKernelOnOneToNine) {
    Kernel2D k{Tensor({1, 1, 3, 3}, 1.0 / 9.0), {0.0}};
    Tensor out = conv2d(iota_map(1, 3, 3), k, 1, Padding::valid);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_NEAR(out[0], 5.0, 1e-12);
}

TEST(Conv2d, OutputSizeFormula) {
    Kernel2D k{random_tensor({2, 3, 3, 3}, 3), {0.1, 0.2}};
    const Tensor x = random_tensor({3, 9, 8}, 4);
    EXPECT_EQ(conv2d(x, k, 1, Padding::valid).shape(), (Shape{2, 7, 6}));
    EXPECT_EQ(conv2d(x, k, 2, Padding::valid).shape(), (Shape{2, 4, 3}));
    EXPECT_EQ(conv2d(x, k, 1, Padding::reflect).shape(), (Shape{2, 9, 8}));
    EXPECT_EQ(conv2d(x, k, 2, Padding::zero).shape(), (Shape{2, 5, 4}));
}

TEST(Conv2d, Errors) {
    Kernel2D k{random_tensor({2, 3, 3, 3}, 5), {0.0, 0.0}};
    EXPECT_THROW(conv2d(Tensor({2, 5, 5}), k), ShapeError);
    EXPECT_THROW(conv2d(Tensor({3, 2, 2}), k), ShapeError);
    EXPECT_THROW(conv2d(Tensor({3, 5, 5}), k, 0), ArgumentError);
    Kernel2D bad_bias{random_tensor({2, 3, 3, 3}, 5), {0.0}};
    EXPECT_THROW(conv2d(Tensor({3, 5, 5}), bad_bias), ShapeError);
}

TEST(Conv2d, MatchesNaiveLoopForEveryKernelPath) {
    for (std::size_t k : {1u, 3u, 5u, 11u}) {
        const Tensor x = random_tensor({3, 13, 12}, 10 + k);
        const Tensor w = random_tensor({4, 3, k, k}, 20 + k);
        const std::vector<double> b{0.1, -0.2, 0.3, 0.0};
        const Tensor fast = conv2d_valid(x, w, b);
        const Tensor ref = naive_conv(x, w, b);
        ASSERT_EQ(fast.shape(), ref.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-12) << "k=" << k;
    }
}

TEST(Conv2d, BackwardMatchesNaiveAdjoint) {
    // <conv(x), g> is bilinear; its gradients against x and w are computed
    // here with plain loops.
    for (std::size_t k : {1u, 3u, 5u}) {
        const Tensor x = random_tensor({2, 7, 6}, 30 + k), w = random_tensor({3, 2, k, k}, 40 + k);
        const std::size_t OH = 7 - k + 1, OW = 6 - k + 1;
        const Tensor g = random_tensor({3, OH, OW}, 50 + k);
        ConvGrads grads = conv2d_valid_backward(x, w, g, 1, true, true);
        Tensor gx(x.shape()), gw(w.shape());
        std::vector<double> gb(3, 0.0);
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t xx = 0; xx < OW; ++xx) {
                    gb[o] += g.at(o, y, xx);
                    for (std::size_t c = 0; c < 2; ++c)
                        for (std::size_t i = 0; i < k; ++i)
                            for (std::size_t j = 0; j < k; ++j) {
                                gx.at(c, y + i, xx + j) += w[((o * 2 + c) * k + i) * k + j] * g.at(o, y, xx);
                                gw[((o * 2 + c) * k + i) * k + j] += x.at(c, y + i, xx + j) * g.at(o, y, xx);
                            }
                }
        for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_NEAR(grads.input[i], gx[i], 1e-12);
        for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_NEAR(grads.weight[i], gw[i], 1e-12);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(grads.bias[i], gb[i], 1e-12);
    }
}

TEST(Conv2d, Linearity) {
    const Tensor w = random_tensor({2, 3, 3, 3}, 60);
    Kernel2D k{w, {0.0, 0.0}};
    const Tensor x = random_tensor({3, 8, 8}, 61), y = random_tensor({3, 8, 8}, 62);
    const double a = 1.7, b = -0.3;
    const Tensor lhs = conv2d(x * a + y * b, k, 1, Padding::reflect);
    const Tensor rhs = conv2d(x, k, 1, Padding::reflect) * a + conv2d(y, k, 1, Padding::reflect) * b;
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12 * std::max(1.0, std::abs(rhs[i])));
}

TEST(Padding, ReflectIndexMirrorsWithoutEdgeRepeat) {
    EXPECT_EQ(reflect_index(-1, 5), 1u);
    EXPECT_EQ(reflect_index(-2, 5), 2u);
    EXPECT_EQ(reflect_index(5, 5), 3u);
    EXPECT_EQ(reflect_index(6, 5), 2u);
    EXPECT_EQ(reflect_index(0, 1), 0u);
    EXPECT_EQ(reflect_index(-3, 2), 1u);
}

// ----------------------------------------------------------------- pooling

TEST(MaxPool2, SingleWindow) {
    Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(maxpool2(x)[0], 4.0);
}

TEST(MaxPool2, ConstantStaysConstant) {
    Tensor out = maxpool2(Tensor({2, 6, 4}, 0.25));
    EXPECT_EQ(out.shape(), (Shape{2, 3, 2}));
    for (double v : out.data()) EXPECT_EQ(v, 0.25);
}

TEST(MaxPool2, Ramp) {
    Tensor out = maxpool2(iota_map(1, 4, 4, 0.0));
    EXPECT_EQ(out.storage(), (std::vector<double>{5, 7, 13, 15}));
}

TEST(MaxPool2, OddDimsRejected) {
    EXPECT_THROW(maxpool2(Tensor({1, 3, 4})), ShapeError);
    EXPECT_THROW(maxpool2(Tensor({1, 4, 5})), ShapeError);
}

TEST(MaxPool2, DominatesWindowAndFirstMaxWinsTies) {
    const Tensor x = random_tensor({3, 8, 6}, 70);
    const Tensor out = maxpool2(x);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t xx = 0; xx < 6; ++xx) EXPECT_GE(out.at(c, y / 2, xx / 2), x.at(c, y, xx));
    PoolResult r = maxpool2_indexed(Tensor({1, 2, 2}, 1.0));
    EXPECT_EQ(r.argmax[0], 0u);
}

TEST(Upsample2, SingleValue) {
    Tensor out = upsample2(Tensor({1, 1, 1}, 3.5));
    EXPECT_EQ(out.shape(), (Shape{1, 2, 2}));
    for (double v : out.data()) EXPECT_EQ(v, 3.5);
}

TEST(Upsample2, ConstantDoubles) {
    Tensor out = upsample2(Tensor({2, 3, 5}, -1.0));
    EXPECT_EQ(out.shape(), (Shape{2, 6, 10}));
    for (double v : out.data()) EXPECT_EQ(v, -1.0);
}

TEST(Upsample2, Replication) {
    Tensor out = upsample2(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(out.storage(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample2, InvertsMaxPoolOnBlockConstantMapsAndPreservesMultiset) {
    const Tensor small = random_tensor({2, 3, 4}, 80);
    const Tensor blocky = upsample2(small);
    EXPECT_EQ(upsample2(maxpool2(blocky)), blocky);
    std::vector<double> a = blocky.storage(), b;
    for (double v : small.data())
        for (int r = 0; r < 4; ++r) b.push_back(v);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
}

// ------------------------------------------------------------- mean filter

TEST(MeanFilter, ConstantIsFixedPoint) {
    const Tensor c({9, 11}, 0.37);
    for (std::size_t k : {1u, 3u, 5u, 9u}) {
        const Tensor out = mean_filter(c, k);
        for (double v : out.data()) EXPECT_EQ(v, 0.37) << "k=" << k;
    }
}

TEST(MeanFilter, KernelOneIsIdentity) {
    const Tensor x = random_tensor({6, 7}, 90);
    EXPECT_EQ(mean_filter(x, 1), x);
}

TEST(MeanFilter, CenterOfOneToNine) {
    Tensor img({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    EXPECT_NEAR(mean_filter(img, 3).at(1, 1), 5.0, 1e-12);
}

TEST(MeanFilter, MatchesBruteForceReflectNeighborhood) {
    const Tensor x = random_tensor({7, 9}, 91);
    const Tensor out = mean_filter(x, 5);
    for (std::size_t y = 0; y < 7; ++y)
        for (std::size_t xx = 0; xx < 9; ++xx) {
            double s = 0.0;
            for (long dy = -2; dy <= 2; ++dy)
                for (long dx = -2; dx <= 2; ++dx) s += x.at(reflect_index(long(y) + dy, 7), reflect_index(long(xx) + dx, 9));
            EXPECT_NEAR(out.at(y, xx), s / 25.0, 1e-12);
        }
}

TEST(MeanFilter, RejectsEvenOrOversizedKernels) {
    EXPECT_THROW(mean_filter(Tensor({5, 5}), 2), ArgumentError);
    EXPECT_THROW(mean_filter(Tensor({5, 5}), 0), ArgumentError);
    EXPECT_THROW(mean_filter(Tensor({5, 5}), 7), ArgumentError);
}

// ------------------------------------------------------------ cyclic shift

TEST(CyclicShift, ZeroAndFullPeriodAreIdentity) {
    const Tensor x = random_tensor({2, 4, 6}, 100);
    EXPECT_EQ(cyclic_shift(x, 0, 0), x);
    EXPECT_EQ(cyclic_shift(x, 4, 6), x);
    EXPECT_EQ(cyclic_shift(x, -8, 12), x);
}

TEST(CyclicShift, TwoByTwo) {
    Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(cyclic_shift(x, 1, 0).storage(), (std::vector<double>{3, 4, 1, 2}));
}

TEST(CyclicShift, InverseIsBitwiseIdentity) {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<long> off(-20, 20);
    for (int i = 0; i < 50; ++i) {
        const Tensor x = random_tensor({3, 5, 7}, 200 + i);
        const long dy = off(rng), dx = off(rng);
        EXPECT_EQ(cyclic_shift(cyclic_shift(x, dy, dx), -dy, -dx), x);
    }
}

// ----------------------------------------------------------- dense algebra

TEST(Matmul, SmallProductAndShapeError) {
    Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor b({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
    EXPECT_EQ(matmul(a, b).storage(), (std::vector<double>{58, 64, 139, 154}));
    EXPECT_THROW(matmul(a, a), ShapeError);
    EXPECT_EQ(transpose(a).storage(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(Softmax, Examples) {
    Tensor s = rowwise_softmax(Tensor({1, 2}, 0.0));
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    Tensor t = rowwise_softmax(Tensor({1, 2}, std::vector<double>{std::log(2.0), 0.0}));
    EXPECT_NEAR(t[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(t[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    const Tensor x = random_tensor({50, 9}, 110, -30.0, 30.0);
    const Tensor s = rowwise_softmax(x);
    Tensor shifted = x;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 9; ++j) shifted.at(i, j) += double(i) * 3.1 - 40.0;
    const Tensor s2 = rowwise_softmax(shifted);
    for (std::size_t i = 0; i < 50; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            sum += s.at(i, j);
            EXPECT_NEAR(s.at(i, j), s2.at(i, j), 1e-12);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Softmax, StableForHugeLogits) {
    Tensor s = rowwise_softmax(Tensor({1, 3}, std::vector<double>{1000.0, 999.0, -1000.0}));
    EXPECT_TRUE(s.all_finite());
    EXPECT_NEAR(s[0] + s[1] + s[2], 1.0, 1e-12);
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
    LayerNormCache c = layer_norm_normalize(Tensor({2, 5}, 3.0));
    for (double v : c.normalized.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroMeanUnitVarianceBeforeAffine) {
    const Tensor x = random_tensor({4, 16}, 120, -5.0, 5.0);
    LayerNormCache c = layer_norm_normalize(x);
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0.0, v = 0.0;
        for (std::size_t j = 0; j < 16; ++j) m += c.normalized.at(i, j);
        m /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) v += (c.normalized.at(i, j) - m) * (c.normalized.at(i, j) - m);
        v /= 16.0;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-5);  // eps 1e-6 inside the root
    }
    EXPECT_THROW(layer_norm(x, std::vector<double>(3, 1.0), std::vector<double>(16, 0.0)), ShapeError);
}

TEST(Elementwise, ReluSigmoidGelu) {
    Tensor x({4}, std::vector<double>{-2.0, 0.0, 0.5, 3.0});
    EXPECT_EQ(relu(x).storage(), (std::vector<double>{0.0, 0.0, 0.5, 3.0}));
    const Tensor s = sigmoid(x);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(2.0)), 1e-15);
    EXPECT_TRUE(sigmoid(Tensor({2}, std::vector<double>{-800.0, 800.0})).all_finite());
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-12);
}

TEST(Tokens, RowMajorRoundTrip) {
    const Tensor map = iota_map(3, 2, 4);
    const Tensor tok = to_tokens(map);
    EXPECT_EQ(tok.shape(), (Shape{8, 3}));
    EXPECT_EQ(tok.at(5, 2), map.at(2, 1, 1));
    EXPECT_EQ(from_tokens(tok, 2, 4), map);
}
