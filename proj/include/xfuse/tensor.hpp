#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace xfuse {

// Error taxonomy shared by the whole library.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct InternalError : std::logic_error {
    using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor of doubles.
///
/// Feature maps are laid out C x H x W, grayscale images H x W and token
/// matrices N x d. Rank-specific accessors check the rank only in debug code
/// paths that call `require_rank`.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }

    /// Like the data constructor, but also rejects NaN and Inf.
    static Tensor checked(Shape shape, std::vector<double> data) {
        Tensor t(std::move(shape), std::move(data));
        if (!t.all_finite()) throw ArgumentError("tensor contains non-finite values");
        return t;
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // rank 2
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
    // rank 3
    double& at(std::size_t ch, std::size_t y, std::size_t x) noexcept {
        return data_[(ch * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t ch, std::size_t y, std::size_t x) const noexcept {
        return data_[(ch * shape_[1] + y) * shape_[2] + x];
    }

    void require_rank(std::size_t r, const char* what) const {
        if (rank() != r)
            throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got shape " +
                             shape_string(shape_));
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
        return Tensor(std::move(s), data_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator*=(double s) noexcept {
        for (double& v : data_) v *= s;
        return *this;
    }

    double sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const noexcept { return data_.empty() ? 0.0 : sum() / double(data_.size()); }
    double max_abs() const noexcept {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    void same_shape(const Tensor& o, const char* what) const {
        if (shape_ != o.shape_)
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(shape_) + " vs " +
                             shape_string(o.shape_));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    a.same_shape(b, "-");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor operator*(Tensor a, double s) { return a *= s; }

/// Grayscale image view helpers: images are rank-2 tensors (H x W).
inline std::size_t height(const Tensor& t) { return t.dim(t.rank() - 2); }
inline std::size_t width(const Tensor& t) { return t.dim(t.rank() - 1); }

/// Promote an H x W image to a 1 x H x W feature map (and back).
inline Tensor as_feature_map(const Tensor& image) {
    if (image.rank() == 3) return image;
    image.require_rank(2, "as_feature_map");
    return image.reshaped({1, image.dim(0), image.dim(1)});
}

inline Tensor as_image(const Tensor& map) {
    if (map.rank() == 2) return map;
    if (map.rank() != 3 || map.dim(0) != 1) throw ShapeError("as_image: expected 1 x H x W, got " + shape_string(map.shape()));
    return map.reshaped({map.dim(1), map.dim(2)});
}

}  // namespace xfuse
