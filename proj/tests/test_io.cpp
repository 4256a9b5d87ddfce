#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "xfuse/data.hpp"
#include "xfuse/image_io.hpp"
#include "xfuse/trainer.hpp"
#include "xfuse/verify.hpp"

using namespace xfuse;
namespace fs = std::filesystem;

namespace {

Tensor rnd(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    return random_uniform(std::move(s), lo, hi, rng);
}

// Values already on the 8-bit grid survive a write/read cycle exactly.
Tensor quantized(Shape s, std::uint64_t seed) {
    Tensor t = rnd(std::move(s), seed);
    for (double& v : t.data()) v = std::round(v * 255.0) / 255.0;
    return t;
}

class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(fs::temp_directory_path() / ("xfuse_io_" + name + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string operator/(const std::string& f) const { return (path_ / f).string(); }
    std::string str() const { return path_.string(); }

private:
    fs::path path_;
};

void write_text(const std::string& path, const std::string& s) {
    std::ofstream f(path, std::ios::binary);
    f << s;
}

}  // namespace

// ------------------------------------------------------------------- PNM

TEST(Pnm, GrayRoundTripIsExactOnTheByteGrid) {
    TempDir d("pgm");
    const Tensor img = quantized({13, 17}, 1);
    write_image(d / "a.pgm", img);
    EXPECT_EQ(read_image(d / "a.pgm"), img);
}

TEST(Pnm, ColorRoundTripIsExactOnTheByteGrid) {
    TempDir d("ppm");
    const Tensor img = quantized({3, 9, 11}, 2);
    write_image(d / "a.ppm", img);
    EXPECT_EQ(read_image(d / "a.ppm"), img);
}

TEST(Pnm, HeaderIsBitExact) {
    TempDir d("hdr");
    write_image(d / "a.pgm", Tensor({2, 3}, 1.0));
    std::ifstream f(d / "a.pgm", std::ios::binary);
    const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    EXPECT_EQ(bytes, std::string("P5\n3 2\n255\n") + std::string(6, '\xff'));
}

TEST(Pnm, ReadsCommentsAndSmallMaxval) {
    TempDir d("cmt");
    write_text(d / "c.pgm", std::string("P5\n# made by hand\n2 1\n# depth\n15\n") + char(0) + char(15));
    const Tensor t = read_image(d / "c.pgm");
    EXPECT_EQ(t.shape(), (Shape{1, 2}));
    EXPECT_EQ(t[0], 0.0);
    EXPECT_EQ(t[1], 1.0);
}

TEST(Pnm, ValuesAreClampedAndRounded) {
    TempDir d("clamp");
    write_image(d / "a.pgm", Tensor({1, 3}, std::vector<double>{-0.5, 0.5, 1.5}));
    const Tensor t = read_image(d / "a.pgm");
    EXPECT_EQ(t[0], 0.0);
    EXPECT_EQ(t[1], 128.0 / 255.0);
    EXPECT_EQ(t[2], 1.0);
}

TEST(Pnm, Errors) {
    TempDir d("err");
    EXPECT_THROW(read_image(d / "missing.pgm"), ImageError);
    write_text(d / "ascii.pgm", "P2\n1 1\n255\n0\n");
    EXPECT_THROW(read_image(d / "ascii.pgm"), ImageError);
    write_text(d / "short.pgm", "P5\n4 4\n255\nabc");
    EXPECT_THROW(read_image(d / "short.pgm"), ImageError);
    write_text(d / "bad.pgm", "P5\nx 4\n255\n");
    EXPECT_THROW(read_image(d / "bad.pgm"), ImageError);
    write_text(d / "deep.pgm", "P5\n1 1\n65535\n\0\0");
    EXPECT_THROW(read_image(d / "deep.pgm"), ImageError);
    EXPECT_THROW(read_image(d / "a.bmp"), ImageError);
    EXPECT_THROW(write_image(d / "c.pgm", Tensor({3, 2, 2})), ImageError);
    EXPECT_THROW(write_image(d / "g.ppm", Tensor({2, 2})), ImageError);
    EXPECT_THROW(write_image(d / "x.tiff", Tensor({2, 2})), ImageError);
}

// ------------------------------------------------------------------- PNG

TEST(Png, RoundTrip) {
    if (!png_supported()) GTEST_SKIP() << "built without libpng";
    TempDir d("png");
    const Tensor gray = quantized({7, 5}, 3), color = quantized({3, 6, 4}, 4);
    write_image(d / "g.png", gray);
    write_image(d / "c.png", color);
    EXPECT_EQ(read_image(d / "g.png"), gray);
    EXPECT_EQ(read_image(d / "c.png"), color);
    write_text(d / "junk.png", "not a png");
    EXPECT_THROW(read_image(d / "junk.png"), ImageError);
}

// ----------------------------------------------------------------- color

TEST(Color, YCrCbRoundTrip) {
    const Tensor rgb = rnd({3, 8, 8}, 5);
    const Tensor back = ycrcb_to_rgb(rgb_to_ycrcb(rgb));
    for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_NEAR(back[i], rgb[i], 1e-12);
}

TEST(Color, Bt601Luma) {
    Tensor rgb({3, 1, 1});
    rgb[0] = 1.0;
    EXPECT_NEAR(to_gray(rgb)[0], 0.299, 1e-15);
    rgb[0] = 0.0, rgb[1] = 1.0;
    EXPECT_NEAR(to_gray(rgb)[0], 0.587, 1e-15);
    const YCrCb gray = rgb_to_ycrcb(Tensor({3, 2, 2}, 0.4));
    for (double v : gray.cr.data()) EXPECT_NEAR(v, 0.5, 1e-15);
    for (double v : gray.cb.data()) EXPECT_NEAR(v, 0.5, 1e-15);
    for (double v : gray.y.data()) EXPECT_NEAR(v, 0.4, 1e-15);
    EXPECT_THROW(rgb_to_ycrcb(Tensor({4, 4})), ShapeError);
}

TEST(Color, GrayPassesThrough) {
    const Tensor g = rnd({4, 5}, 6);
    EXPECT_EQ(to_gray(g), g);
}

// ---------------------------------------------------------------- resize

TEST(Resize, IdentityAndConstants) {
    const Tensor img = rnd({6, 9}, 7);
    EXPECT_EQ(resize_bilinear(img, 6, 9), img);
    const Tensor up = resize_bilinear(Tensor({5, 5}, 0.3), 11, 7);
    for (double v : up.data()) EXPECT_NEAR(v, 0.3, 1e-15);
    EXPECT_THROW(resize_bilinear(img, 0, 4), ArgumentError);
}

TEST(Resize, DownscaleByTwoAveragesPairs) {
    Tensor img({2, 4});
    for (std::size_t i = 0; i < 8; ++i) img[i] = double(i);
    const Tensor out = resize_bilinear(img, 1, 2);
    EXPECT_NEAR(out[0], (0 + 1 + 4 + 5) / 4.0, 1e-15);
    EXPECT_NEAR(out[1], (2 + 3 + 6 + 7) / 4.0, 1e-15);
}

// ------------------------------------------------------------ ingestion

TEST(Corpus, PairsByStemInLexicographicOrder) {
    TempDir d("pairs");
    for (const char* f : {"b_ir.pgm", "b_vi.pgm", "a_vi.pgm", "a_ir.pgm", "c_ir.pgm", "x_rgb.pgm"})
        write_image(d / f, Tensor({8, 8}, 0.5));
    write_text(d / "notes.txt", "ignored");
    std::vector<std::string> warnings;
    const auto pairs = find_pairs(d.str(), warnings);
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].stem, "a");
    EXPECT_EQ(pairs[1].stem, "b");
    EXPECT_EQ(pairs[0].ir.filename(), "a_ir.pgm");
    EXPECT_EQ(pairs[0].vi.filename(), "a_vi.pgm");
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("'c'"), std::string::npos);
}

TEST(Corpus, LoadsGrayResizedAndSkipsUnreadable) {
    TempDir d("load");
    write_image(d / "p_ir.pgm", rnd({40, 48}, 8));
    write_image(d / "p_vi.ppm", rnd({3, 40, 48}, 9));
    write_image(d / "q_ir.pgm", Tensor({8, 8}));
    write_text(d / "q_vi.pgm", "garbage");
    const Corpus c = load_corpus(d.str(), 32);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.pairs[0].stem, "p");
    EXPECT_EQ(c.pairs[0].ir.shape(), (Shape{32, 32}));
    EXPECT_EQ(c.pairs[0].vi.shape(), (Shape{32, 32}));
    EXPECT_FALSE(c.warnings.empty());
}

TEST(Corpus, EmptyDirectoryThrows) {
    TempDir d("empty");
    EXPECT_THROW(load_corpus(d.str(), 32), ArgumentError);
    EXPECT_THROW(load_corpus(d / "nope", 32), ArgumentError);
}

TEST(Corpus, WriteThenLoadRoundTrips) {
    TempDir d("write");
    const Corpus c = synthetic_corpus(3, 32, 4);
    write_corpus(c, d.str());
    const Corpus back = load_corpus(d.str(), 32);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.pairs[i].stem, c.pairs[i].stem);
        for (std::size_t j = 0; j < c.pairs[i].ir.size(); ++j) EXPECT_NEAR(back.pairs[i].ir[j], c.pairs[i].ir[j], 0.5 / 255.0 + 1e-12);
    }
}

TEST(Synthetic, DeterministicAndInRange) {
    const Corpus a = synthetic_corpus(2, 32, 9), b = synthetic_corpus(2, 32, 9);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(a.pairs[i].ir, b.pairs[i].ir);
        EXPECT_EQ(a.pairs[i].vi, b.pairs[i].vi);
        for (double v : a.pairs[i].ir.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

// -------------------------------------------------------------- inference

TEST(Inference, PadAndCrop) {
    const Tensor img = rnd({5, 11}, 10);
    const Tensor p = pad_to_multiple(img, 8);
    EXPECT_EQ(p.shape(), (Shape{8, 16}));
    EXPECT_EQ(p.at(5, 0), img.at(3, 0));  // reflection about the last row
    EXPECT_EQ(crop(p, 5, 11), img);
    EXPECT_EQ(pad_to_multiple(Tensor({8, 8}), 8).shape(), (Shape{8, 8}));
}

TEST(Inference, FuseGrayKeepsOddSizes) {
    const FuseConfig cfg;
    const FusionNet net(cfg);
    ParamStore store;
    Rng rng(11);
    net.init(store, rng);
    const Tensor f = fuse_gray(net, store, rnd({37, 45}, 12), rnd({37, 45}, 13));
    EXPECT_EQ(f.shape(), (Shape{37, 45}));
    for (double v : f.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_THROW(fuse_gray(net, store, rnd({16, 16}, 1), rnd({16, 24}, 2)), ShapeError);
}

TEST(Inference, ColorFusionCopiesVisibleChroma) {
    const FuseConfig cfg;
    const FusionNet net(cfg);
    ParamStore store;
    Rng rng(14);
    net.init(store, rng);
    const Tensor ir = rnd({24, 24}, 15), vi = rnd({3, 24, 24}, 16);
    const ColorFusion out = fuse_color(net, store, ir, vi);
    const YCrCb in = rgb_to_ycrcb(vi);
    EXPECT_EQ(out.planes.cr, in.cr);
    EXPECT_EQ(out.planes.cb, in.cb);
    EXPECT_EQ(out.planes.y, fuse_gray(net, store, ir, in.y));
    EXPECT_EQ(out.rgb, ycrcb_to_rgb(out.planes));
    EXPECT_EQ(out.rgb.shape(), (Shape{3, 24, 24}));
}
