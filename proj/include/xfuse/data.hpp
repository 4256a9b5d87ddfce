#pragma once

// Paired infrared / visible corpora: directory ingestion and synthetic pairs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xfuse/image_io.hpp"
#include "xfuse/layers.hpp"

namespace xfuse {

struct ImagePair {
    std::string stem;
    Tensor ir;  // H x W grayscale
    Tensor vi;  // H x W grayscale (luma when the file is color)
};

struct Corpus {
    std::vector<ImagePair> pairs;
    std::vector<std::string> warnings;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

struct PairPaths {
    std::string stem;
    std::filesystem::path ir, vi;
};

/// Splits "name_ir.ext" / "name_vi.ext" into ("name", modality). Returns
/// false for files that follow neither pattern.
inline bool split_pair_name(const std::filesystem::path& file, std::string& stem, Modality& m) {
    const std::string s = file.stem().string();
    if (s.size() < 4 || s[s.size() - 3] != '_') return false;
    const std::string tag = s.substr(s.size() - 2);
    if (tag == "ir") m = Modality::ir;
    else if (tag == "vi") m = Modality::vi;
    else return false;
    stem = s.substr(0, s.size() - 3);
    return !stem.empty();
}

/// Pairs files in `dir` by shared stem, in lexicographic stem order. Stems
/// missing one side are reported in `warnings`.
inline std::vector<PairPaths> find_pairs(const std::string& dir, std::vector<std::string>& warnings) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ArgumentError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::map<std::string, PairPaths> by_stem;
    for (const auto& f : files) {
        std::string stem;
        Modality m;
        if (!split_pair_name(f, stem, m)) continue;
        auto& p = by_stem[stem];
        p.stem = stem;
        fs::path& slot = m == Modality::ir ? p.ir : p.vi;
        if (!slot.empty()) {
            warnings.push_back("duplicate " + to_string(m) + " image for '" + stem + "', keeping " + slot.filename().string());
            continue;
        }
        slot = f;
    }
    std::vector<PairPaths> out;
    for (auto& [stem, p] : by_stem) {
        if (p.ir.empty() || p.vi.empty()) {
            warnings.push_back("unpaired stem '" + stem + "' skipped");
            continue;
        }
        out.push_back(std::move(p));
    }
    return out;
}

/// Loads every pair in `dir` as grayscale, resized to size x size.
/// Unreadable files are skipped with a warning; an empty result throws.
inline Corpus load_corpus(const std::string& dir, std::size_t size) {
    Corpus c;
    for (const auto& p : find_pairs(dir, c.warnings)) {
        try {
            Tensor ir = to_gray(read_image(p.ir.string()));
            Tensor vi = to_gray(read_image(p.vi.string()));
            c.pairs.push_back({p.stem, resize_bilinear(ir, size, size), resize_bilinear(vi, size, size)});
        } catch (const ImageError& e) {
            c.warnings.push_back(std::string("skipped: ") + e.what());
        }
    }
    if (c.empty()) throw ArgumentError("no usable image pairs in " + dir);
    return c;
}

// -------------------------------------------------------------- synthetic

struct SyntheticOptions {
    std::size_t blobs = 2;        // bright thermal targets in the infrared image
    bool ir_texture = false;      // faint texture in the infrared background
    bool vi_texture = true;       // oriented sinusoid texture in the visible image
    bool vi_blobs = false;        // copy of the targets, dimmed, in the visible image
};

/// Infrared: dark smooth background with Gaussian hot spots. Visible: mid-gray
/// illumination gradient plus oriented texture.
inline ImagePair synthetic_pair(std::size_t size, Rng& rng, const SyntheticOptions& opt = {},
                                std::string stem = "synthetic") {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double n = double(size);
    Tensor ir({size, size}), vi({size, size});

    struct Blob { double cy, cx, r, amp; };
    std::vector<Blob> blobs;
    for (std::size_t b = 0; b < opt.blobs; ++b)
        blobs.push_back({n * (0.2 + 0.6 * u(rng)), n * (0.2 + 0.6 * u(rng)), n * (0.06 + 0.08 * u(rng)), 0.6 + 0.3 * u(rng)});
    const double bg = 0.1 + 0.1 * u(rng), bg_slope = 0.1 * u(rng);
    const double f1 = 2.0 + 4.0 * u(rng), f2 = 2.0 + 4.0 * u(rng), theta = std::numbers::pi * u(rng);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double light = 0.35 + 0.2 * u(rng), light_slope = 0.2 * (u(rng) - 0.5);

    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double fy = double(y) / n, fx = double(x) / n;
            double hot = 0.0;
            for (const auto& b : blobs) {
                const double dy = double(y) - b.cy, dx = double(x) - b.cx;
                hot += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.r * b.r));
            }
            const double along = std::cos(theta) * fx + std::sin(theta) * fy;
            const double tex = 0.5 * std::sin(2.0 * std::numbers::pi * f1 * along + phase) +
                               0.5 * std::sin(2.0 * std::numbers::pi * f2 * (fx - fy));
            double vi_v = light + light_slope * (fx - 0.5);
            if (opt.vi_texture) vi_v += 0.25 * tex;
            if (opt.vi_blobs) vi_v += 0.3 * hot;
            double ir_v = bg + bg_slope * fy + hot;
            if (opt.ir_texture) ir_v += 0.05 * tex;
            ir.at(y, x) = std::clamp(ir_v, 0.0, 1.0);
            vi.at(y, x) = std::clamp(vi_v, 0.0, 1.0);
        }
    return {std::move(stem), std::move(ir), std::move(vi)};
}

inline Corpus synthetic_corpus(std::size_t pairs, std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    Corpus c;
    for (std::size_t i = 0; i < pairs; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "pair%03zu", i);
        SyntheticOptions opt;
        opt.blobs = 1 + i % 3;
        opt.ir_texture = i % 2 == 1;
        opt.vi_blobs = i % 2 == 0;
        c.pairs.push_back(synthetic_pair(size, rng, opt, stem));
    }
    return c;
}

/// Writes a corpus as `<stem>_ir.pgm` / `<stem>_vi.pgm`.
inline void write_corpus(const Corpus& c, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& p : c.pairs) {
        write_image((std::filesystem::path(dir) / (p.stem + "_ir.pgm")).string(), p.ir);
        write_image((std::filesystem::path(dir) / (p.stem + "_vi.pgm")).string(), p.vi);
    }
}

}  // namespace xfuse
