#pragma once

// Image files and color handling. Grayscale images are H x W tensors, color
// images 3 x H x W (R, G, B planes), all with values in [0, 1].
//
// Binary PGM (P5) and PPM (P6) are always available; PNG needs libpng and the
// XFUSE_HAVE_PNG definition.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef XFUSE_HAVE_PNG
#include <png.h>
#endif

#include "xfuse/tensor.hpp"

namespace xfuse {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool is_color(const Tensor& img) { return img.rank() == 3 && img.dim(0) == 3; }

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// ------------------------------------------------------------------- PNM

namespace detail {

inline std::string lower_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

/// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(char(c));
        }
        c = in.get();
    }
    return tok;
}

inline std::size_t pnm_number(std::istream& in, const std::string& path) {
    const std::string tok = pnm_token(in);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw ImageError(path + ": malformed PNM header");
    return std::stoul(tok);
}

}  // namespace detail

inline Tensor read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path);
    const std::string magic = detail::pnm_token(in);
    if (magic != "P5" && magic != "P6") throw ImageError(path + ": not a binary PGM/PPM file");
    const std::size_t w = detail::pnm_number(in, path), h = detail::pnm_number(in, path);
    const std::size_t maxval = detail::pnm_number(in, path);
    if (w == 0 || h == 0 || w > 65536 || h > 65536) throw ImageError(path + ": unsupported dimensions");
    if (maxval == 0 || maxval > 255) throw ImageError(path + ": only 8-bit PNM files are supported");
    const std::size_t channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> bytes(w * h * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (std::size_t(in.gcount()) != bytes.size()) throw ImageError(path + ": truncated pixel data");
    const double scale = double(maxval);
    if (channels == 1) {
        Tensor img({h, w});
        for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / scale;
        return img;
    }
    Tensor img({3, h, w});
    for (std::size_t i = 0; i < w * h; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[c * w * h + i] = bytes[i * 3 + c] / scale;
    return img;
}

namespace detail {

/// Interleaved 8-bit samples of a gray (H x W) or color (3 x H x W) image.
inline std::vector<unsigned char> interleave_bytes(const Tensor& img, std::size_t& h, std::size_t& w, std::size_t& channels) {
    if (img.rank() == 2) {
        h = img.dim(0), w = img.dim(1), channels = 1;
    } else if (is_color(img)) {
        h = img.dim(1), w = img.dim(2), channels = 3;
    } else {
        throw ShapeError("image must be H x W or 3 x H x W, got " + shape_string(img.shape()));
    }
    std::vector<unsigned char> bytes(h * w * channels);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < channels; ++c) bytes[i * channels + c] = to_byte(img[c * h * w + i]);
    return bytes;
}

}  // namespace detail

inline void write_pnm(const std::string& path, const Tensor& img) {
    std::size_t h = 0, w = 0, channels = 0;
    const auto bytes = detail::interleave_bytes(img, h, w, channels);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError("cannot open " + path + " for writing");
    out << (channels == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw ImageError("write failed for " + path);
}

// ------------------------------------------------------------------- PNG

inline bool png_supported() {
#ifdef XFUSE_HAVE_PNG
    return true;
#else
    return false;
#endif
}

#ifdef XFUSE_HAVE_PNG
inline Tensor read_png(const std::string& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw ImageError(path + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t h = image.height, w = image.width, channels = color ? 3 : 1;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ImageError(path + ": " + msg);
    }
    Tensor img = color ? Tensor({3, h, w}) : Tensor({h, w});
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < channels; ++c) img[c * h * w + i] = bytes[i * channels + c] / 255.0;
    return img;
}

inline void write_png(const std::string& path, const Tensor& img) {
    std::size_t h = 0, w = 0, channels = 0;
    const auto bytes = detail::interleave_bytes(img, h, w, channels);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(w);
    image.height = png_uint_32(h);
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw ImageError(path + ": " + image.message);
}
#endif

/// Dispatches on the file extension: pgm/ppm/pnm or png.
inline Tensor read_image(const std::string& path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm") return read_pnm(path);
    if (ext == "png") {
#ifdef XFUSE_HAVE_PNG
        return read_png(path);
#else
        throw ImageError(path + ": PNG support was not compiled in");
#endif
    }
    throw ImageError(path + ": unsupported image extension");
}

inline void write_image(const std::string& path, const Tensor& img) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "png") {
#ifdef XFUSE_HAVE_PNG
        write_png(path, img);
        return;
#else
        throw ImageError(path + ": PNG support was not compiled in");
#endif
    }
    if (ext == "pgm" && is_color(img)) throw ImageError(path + ": PGM cannot hold a color image");
    if (ext == "ppm" && !is_color(img)) throw ImageError(path + ": PPM expects a color image");
    if (ext != "pgm" && ext != "ppm" && ext != "pnm") throw ImageError(path + ": unsupported image extension");
    write_pnm(path, img);
}

// ----------------------------------------------------------------- color

// BT.601 luma weights, full range.
inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

struct YCrCb {
    Tensor y, cr, cb;  // H x W planes; chroma centered on 0.5
};

inline YCrCb rgb_to_ycrcb(const Tensor& rgb) {
    if (!is_color(rgb)) throw ShapeError("rgb_to_ycrcb: expected 3 x H x W, got " + shape_string(rgb.shape()));
    const std::size_t h = rgb.dim(1), w = rgb.dim(2), n = h * w;
    YCrCb out{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rgb[i], g = rgb[n + i], b = rgb[2 * n + i];
        const double y = kLumaR * r + kLumaG * g + kLumaB * b;
        out.y[i] = y;
        out.cr[i] = 0.5 + (r - y) / (2.0 * (1.0 - kLumaR));
        out.cb[i] = 0.5 + (b - y) / (2.0 * (1.0 - kLumaB));
    }
    return out;
}

inline Tensor ycrcb_to_rgb(const YCrCb& p) {
    p.y.require_rank(2, "ycrcb_to_rgb");
    p.y.same_shape(p.cr, "ycrcb_to_rgb");
    p.y.same_shape(p.cb, "ycrcb_to_rgb");
    const std::size_t h = p.y.dim(0), w = p.y.dim(1), n = h * w;
    Tensor rgb({3, h, w});
    for (std::size_t i = 0; i < n; ++i) {
        const double y = p.y[i];
        const double r = y + 2.0 * (1.0 - kLumaR) * (p.cr[i] - 0.5);
        const double b = y + 2.0 * (1.0 - kLumaB) * (p.cb[i] - 0.5);
        const double g = (y - kLumaR * r - kLumaB * b) / kLumaG;
        rgb[i] = std::clamp(r, 0.0, 1.0);
        rgb[n + i] = std::clamp(g, 0.0, 1.0);
        rgb[2 * n + i] = std::clamp(b, 0.0, 1.0);
    }
    return rgb;
}

/// BT.601 luma for color input; grayscale passes through.
inline Tensor to_gray(const Tensor& img) {
    if (img.rank() == 2) return img;
    return rgb_to_ycrcb(img).y;
}

// ---------------------------------------------------------------- resize

/// Bilinear resampling with half-pixel centers and edge clamping.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
    img.require_rank(2, "resize_bilinear");
    if (out_h == 0 || out_w == 0) throw ArgumentError("resize_bilinear: empty target size");
    const std::size_t H = img.dim(0), W = img.dim(1);
    if (H == out_h && W == out_w) return img;
    Tensor out({out_h, out_w});
    auto coord = [](std::size_t o, std::size_t in_n, std::size_t out_n, std::size_t& i0, std::size_t& i1, double& t) {
        double s = (double(o) + 0.5) * double(in_n) / double(out_n) - 0.5;
        s = std::clamp(s, 0.0, double(in_n - 1));
        i0 = std::size_t(std::floor(s));
        i1 = std::min(i0 + 1, in_n - 1);
        t = s - double(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double ty;
        coord(y, H, out_h, y0, y1, ty);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double tx;
            coord(x, W, out_w, x0, x1, tx);
            const double top = img.at(y0, x0) * (1.0 - tx) + img.at(y0, x1) * tx;
            const double bot = img.at(y1, x0) * (1.0 - tx) + img.at(y1, x1) * tx;
            out.at(y, x) = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

}  // namespace xfuse
