#pragma once

// Per-modality feature extractor: a 3x3 stem conv followed by three
// MaxPooling + DenseBlock stages. The stem output is the shallow skip feature,
// the last DenseBlock output the deep feature handed to the fusion module.

#include <array>
#include <string>
#include <vector>

#include "xfuse/layers.hpp"

namespace xfuse {

inline constexpr std::size_t kStemChannels = 16;
inline constexpr std::size_t kDenseGrowth = 16;
inline constexpr std::size_t kDenseLayers = 4;
inline constexpr std::array<std::size_t, 3> kStageChannels{16, 32, 64};
inline constexpr std::size_t kDeepChannels = kStageChannels.back();
inline constexpr std::size_t kEncoderDownscale = 8;

/// Four 3x3 conv+ReLU layers, each fed the concatenation of the block input
/// and every earlier layer output, then a linear 1x1 compression conv.
class DenseBlock {
public:
    DenseBlock(std::string prefix, std::size_t in_channels, std::size_t out_channels,
               std::size_t growth = kDenseGrowth, std::size_t layers = kDenseLayers)
        : prefix_(std::move(prefix)), in_(in_channels), out_(out_channels), growth_(growth), layers_(layers) {}

    void init(ParamStore& store, Rng& rng) const {
        for (std::size_t i = 0; i < layers_; ++i) init_conv(store, layer_name(i), in_ + i * growth_, growth_, 3, rng);
        init_conv(store, prefix_ + ".compress", in_ + layers_ * growth_, out_, 1, rng);
    }

    Var forward(Graph& g, ParamStore& store, const Var& x) const {
        std::vector<Var> features{x};
        for (std::size_t i = 0; i < layers_; ++i) {
            Var input = features.size() == 1 ? features[0] : concat_channels(features);
            features.push_back(relu(conv_layer(g, store, layer_name(i), input)));
        }
        return conv_layer(g, store, prefix_ + ".compress", concat_channels(features));
    }

    std::size_t out_channels() const { return out_; }

private:
    std::string layer_name(std::size_t i) const { return prefix_ + ".conv" + std::to_string(i); }

    std::string prefix_;
    std::size_t in_, out_, growth_, layers_;
};

struct EncoderFeatures {
    Var shallow;  // kStemChannels x H x W
    Var deep;     // kDeepChannels x H/8 x W/8
};

class Encoder {
public:
    explicit Encoder(std::string prefix) : prefix_(std::move(prefix)) {
        std::size_t in = kStemChannels;
        for (std::size_t s = 0; s < kStageChannels.size(); ++s) {
            blocks_.emplace_back(prefix_ + ".stage" + std::to_string(s), in, kStageChannels[s]);
            in = kStageChannels[s];
        }
    }

    const std::string& prefix() const { return prefix_; }

    void init(ParamStore& store, Rng& rng) const {
        init_conv(store, prefix_ + ".stem", 1, kStemChannels, 3, rng);
        for (const auto& b : blocks_) b.init(store, rng);
    }

    /// `image` is 1 x H x W with H, W divisible by 8.
    EncoderFeatures forward(Graph& g, ParamStore& store, const Var& image) const {
        const Tensor& v = image.value();
        v.require_rank(3, "encode");
        if (v.dim(0) != 1) throw ShapeError("encode: expected a single-channel image");
        if (v.dim(1) % kEncoderDownscale || v.dim(2) % kEncoderDownscale || v.dim(1) == 0 || v.dim(2) == 0)
            throw ShapeError("encode: spatial dims must be divisible by 8, got " + shape_string(v.shape()));
        EncoderFeatures f;
        f.shallow = relu(conv_layer(g, store, prefix_ + ".stem", image));
        Var x = f.shallow;
        for (const auto& b : blocks_) x = b.forward(g, store, maxpool2(x));
        f.deep = x;
        return f;
    }

private:
    std::string prefix_;
    std::vector<DenseBlock> blocks_;
};

/// Evaluates an encoder outside of training; returns {shallow, deep}.
inline std::pair<Tensor, Tensor> encode(const Tensor& image, ParamStore& store, const std::string& prefix) {
    Graph g(false);
    EncoderFeatures f = Encoder(prefix).forward(g, store, g.constant(as_feature_map(image)));
    return {f.shallow.value(), f.deep.value()};
}

}  // namespace xfuse
