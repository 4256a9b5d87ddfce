#pragma once

#include <memory>
#include <string>
#include <variant>

#include "xfuse/cam.hpp"
#include "xfuse/config.hpp"
#include "xfuse/decoder.hpp"
#include "xfuse/encoder.hpp"

namespace xfuse {

inline std::string encoder_prefix(Modality m) { return "enc_" + to_string(m); }

/// Stage-one network: one encoder and one decoder for a single modality. The
/// skip bundles carry the same features on both sides, so each skip adds
/// the encoder feature with weight one.
class AutoEncoder {
public:
    explicit AutoEncoder(Modality m) : modality_(m), encoder_(encoder_prefix(m)), decoder_("dec_" + to_string(m)) {}

    void init(ParamStore& store, Rng& rng) const {
        encoder_.init(store, rng);
        decoder_.init(store, rng);
    }

    /// image: H x W -> reconstruction H x W.
    Var reconstruct(Graph& g, ParamStore& store, const Var& image) const {
        const Tensor& v = image.value();
        v.require_rank(2, "reconstruct");
        EncoderFeatures f = encoder_.forward(g, store, reshape(image, {1, v.dim(0), v.dim(1)}));
        Var out = decoder_.forward(g, store, f.deep, {f.deep, f.deep}, {f.shallow, f.shallow});
        return reshape(out, v.shape());
    }

    Modality modality() const { return modality_; }
    const Encoder& encoder() const { return encoder_; }

private:
    Modality modality_;
    Encoder encoder_;
    Decoder decoder_;
};

/// Full fusion network: two encoders, a fusion module (CAM or an ablation
/// baseline) and the skip-fusing decoder.
class FusionNet {
public:
    explicit FusionNet(const FuseConfig& cfg)
        : cfg_(cfg), enc_ir_(encoder_prefix(Modality::ir)), enc_vi_(encoder_prefix(Modality::vi)), decoder_("dec") {
        switch (cfg.fusion) {
            case FusionModule::cam: fusion_ = Cam("cam", CamLayout::from_config(cfg)); break;
            case FusionModule::cnn: fusion_ = CnnFusion(); break;
            case FusionModule::dense: fusion_ = DenseFusion(); break;
        }
    }

    void init(ParamStore& store, Rng& rng) const {
        enc_ir_.init(store, rng);
        enc_vi_.init(store, rng);
        std::visit([&](const auto& f) { f.init(store, rng); }, fusion_);
        decoder_.init(store, rng);
    }

    /// Initializes only the fusion module and the decoder (encoders come from
    /// stage-one checkpoints).
    void init_head(ParamStore& store, Rng& rng) const {
        std::visit([&](const auto& f) { f.init(store, rng); }, fusion_);
        decoder_.init(store, rng);
    }

    /// ir, vi: H x W images -> fused H x W image in (0, 1).
    Var fuse(Graph& g, ParamStore& store, const Var& ir, const Var& vi) const {
        const Tensor& a = ir.value();
        a.require_rank(2, "fuse");
        if (a.shape() != vi.value().shape()) throw ShapeError("fuse: source images differ in size");
        const Shape fm{1, a.dim(0), a.dim(1)};
        EncoderFeatures f_ir = enc_ir_.forward(g, store, reshape(ir, fm));
        EncoderFeatures f_vi = enc_vi_.forward(g, store, reshape(vi, fm));
        Var fused = std::visit([&](const auto& f) { return f.forward(g, store, f_ir.deep, f_vi.deep); }, fusion_);
        Var out = decoder_.forward(g, store, fused, {f_ir.deep, f_vi.deep}, {f_ir.shallow, f_vi.shallow});
        return reshape(out, a.shape());
    }

    const FuseConfig& config() const { return cfg_; }

    /// The attention module, or null for the convolutional baselines.
    const Cam* cam() const { return std::get_if<Cam>(&fusion_); }

private:
    FuseConfig cfg_;
    Encoder enc_ir_, enc_vi_;
    std::variant<Cam, CnnFusion, DenseFusion> fusion_;
    Decoder decoder_;
};

inline Tensor fuse_images(const FusionNet& net, ParamStore& store, const Tensor& ir, const Tensor& vi) {
    Graph g(false);
    return net.fuse(g, store, g.constant(ir), g.constant(vi)).value();
}

}  // namespace xfuse
