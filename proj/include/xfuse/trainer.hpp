#pragma once

// Two-stage training. Stage one fits one autoencoder per modality; stage two
// freezes the encoders and fits the fusion module and decoder.

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xfuse/checkpoint.hpp"
#include "xfuse/data.hpp"
#include "xfuse/losses.hpp"
#include "xfuse/model.hpp"
#include "xfuse/optim.hpp"

namespace xfuse {

inline const std::string kKindAutoencoderIr = "autoencoder-ir";
inline const std::string kKindAutoencoderVi = "autoencoder-vi";
inline const std::string kKindFusion = "fusion";

inline std::string autoencoder_kind(Modality m) { return m == Modality::ir ? kKindAutoencoderIr : kKindAutoencoderVi; }

/// One line of the training log. Stage one fills (mse, ssim), stage two
/// (intensity, gradient) into `a` and `b`.
struct LogEntry {
    std::size_t step = 0;
    int stage = 1;
    double lr = 0.0;
    double total = 0.0;
    double a = 0.0;
    double b = 0.0;

    std::string line() const {
        return std::to_string(step) + "," + std::to_string(stage) + "," + detail::format_double(lr) + "," +
               detail::format_double(total) + "," + detail::format_double(a) + "," + detail::format_double(b);
    }
};

/// Receives each step as it completes.
using LogSink = std::function<void(const LogEntry&)>;

inline LogSink stream_log(std::ostream& os) {
    return [&os](const LogEntry& e) { os << e.line() << "\n" << std::flush; };
}

inline std::size_t steps_per_epoch(const FuseConfig& cfg, std::size_t corpus_size) {
    if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
    return (corpus_size + cfg.batch_size - 1) / cfg.batch_size;
}

/// Deterministic minibatch order: reshuffles the corpus each time it is used up.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch) : order_(n), batch_(std::min(batch, n)) {
        if (n == 0) throw ArgumentError("empty corpus");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        cursor_ = n;
    }

    std::vector<std::size_t> next(Rng& rng) {
        std::vector<std::size_t> out;
        while (out.size() < batch_) {
            if (cursor_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng);
                cursor_ = 0;
            }
            out.push_back(order_[cursor_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------- stage 1

struct Stage1Result {
    Checkpoint ir;
    Checkpoint vi;
    std::vector<LogEntry> log;
};

/// Batch-mean autoencoder loss over `images` for one modality.
inline AutoLoss autoencoder_batch_loss(Graph& g, const AutoEncoder& ae, ParamStore& store,
                                       const std::vector<const Tensor*>& images, const LossWeights& w) {
    std::optional<AutoLoss> acc;
    for (const Tensor* img : images) {
        const Var x = g.constant(*img);
        AutoLoss l = loss_auto(x, ae.reconstruct(g, store, x), w);
        if (!acc) {
            acc = l;
        } else {
            acc->total = add(acc->total, l.total);
            acc->mse = add(acc->mse, l.mse);
            acc->ssim_term = add(acc->ssim_term, l.ssim_term);
        }
    }
    const double inv = 1.0 / double(images.size());
    return {scale(acc->total, inv), scale(acc->mse, inv), scale(acc->ssim_term, inv)};
}

/// Corpus-mean loss_auto of a trained pair of autoencoders, summed over
/// the two modalities (the same quantity the stage-one log reports).
inline double evaluate_autoencoders(const Corpus& corpus, const Checkpoint& ir, const Checkpoint& vi,
                                    const LossWeights& w) {
    double total = 0.0;
    for (const Checkpoint* c : {&ir, &vi}) {
        const Modality m = c->kind == kKindAutoencoderIr ? Modality::ir : Modality::vi;
        AutoEncoder ae(m);
        ParamStore store;
        Rng rng(0);
        ae.init(store, rng);
        c->restore_into(store);
        for (const auto& p : corpus.pairs) {
            Graph g(false);
            const Var x = g.constant(m == Modality::ir ? p.ir : p.vi);
            total += loss_auto(x, ae.reconstruct(g, store, x), w).total.value()[0];
        }
    }
    return total / double(corpus.size());
}

inline Stage1Result train_stage1(const Corpus& corpus, FuseConfig cfg, const LogSink& log = {}) {
    cfg.stage = 1;
    cfg.validate();
    if (corpus.empty()) throw ArgumentError("train_stage1: empty corpus");
    Rng rng(cfg.seed);
    const LossWeights w = LossWeights::from_config(cfg);
    const AutoEncoder ae_ir(Modality::ir), ae_vi(Modality::vi);
    ParamStore store_ir, store_vi;
    ae_ir.init(store_ir, rng);
    ae_vi.init(store_vi, rng);

    Stage1Result result;
    BatchSampler sampler(corpus.size(), cfg.batch_size);
    const std::size_t spe = steps_per_epoch(cfg, corpus.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        for (std::size_t s = 0; s < spe; ++s, ++step) {
            const auto batch = sampler.next(rng);
            LogEntry e{step, 1, lr};
            for (auto [ae, store] : {std::pair{&ae_ir, &store_ir}, std::pair{&ae_vi, &store_vi}}) {
                std::vector<const Tensor*> images;
                for (auto i : batch) images.push_back(ae->modality() == Modality::ir ? &corpus.pairs[i].ir : &corpus.pairs[i].vi);
                Graph g;
                const AutoLoss l = autoencoder_batch_loss(g, *ae, *store, images, w);
                backward(l.total, *store);
                clip_grad_norm(*store, cfg.grad_clip);
                sgd_step(*store, lr, cfg.momentum);
                e.total += l.total.value()[0];
                e.a += l.mse.value()[0];
                e.b += l.ssim_term.value()[0];
            }
            result.log.push_back(e);
            if (log) log(e);
        }
    }
    result.ir = Checkpoint::capture(kKindAutoencoderIr, cfg, store_ir, step, rng);
    result.vi = Checkpoint::capture(kKindAutoencoderVi, cfg, store_vi, step, rng);
    return result;
}

// ---------------------------------------------------------------- stage 2

struct Stage2Result {
    Checkpoint model;
    std::vector<LogEntry> log;
};

/// Builds a parameter store for `net`, filled from a fusion checkpoint.
inline ParamStore load_fusion_store(const FusionNet& net, const Checkpoint& ckpt) {
    if (ckpt.kind != kKindFusion) throw LoadError(LoadErrorKind::shape_mismatch, "expected a fusion checkpoint, got '" + ckpt.kind + "'");
    ParamStore store;
    Rng rng(0);
    net.init(store, rng);
    ckpt.restore_into(store);
    return store;
}

/// Copies a stage-one encoder into the fusion store under the same names.
inline void load_encoder(ParamStore& store, const Checkpoint& ae, Modality m) {
    if (ae.kind != autoencoder_kind(m))
        throw LoadError(LoadErrorKind::shape_mismatch, "expected an " + autoencoder_kind(m) + " checkpoint, got '" + ae.kind + "'");
    ae.restore_into(store, encoder_prefix(m) + ".");
}

/// Batch-mean fusion loss.
inline CamLoss fusion_batch_loss(Graph& g, const FusionNet& net, ParamStore& store, const Corpus& corpus,
                                 const std::vector<std::size_t>& batch, const LossWeights& w) {
    std::optional<CamLoss> acc;
    for (auto i : batch) {
        const auto& p = corpus.pairs[i];
        CamLoss l = loss_cam(net.fuse(g, store, g.constant(p.ir), g.constant(p.vi)), p.ir, p.vi, w);
        if (!acc) {
            acc = l;
        } else {
            acc->total = add(acc->total, l.total);
            acc->intensity = add(acc->intensity, l.intensity);
            acc->gradient = add(acc->gradient, l.gradient);
        }
    }
    const double inv = 1.0 / double(batch.size());
    return {scale(acc->total, inv), scale(acc->intensity, inv), scale(acc->gradient, inv)};
}

inline double evaluate_fusion(const Corpus& corpus, const FusionNet& net, ParamStore& store, const LossWeights& w) {
    double total = 0.0;
    for (const auto& p : corpus.pairs) total += loss_cam(fuse_images(net, store, p.ir, p.vi), p.ir, p.vi, w);
    return total / double(corpus.size());
}

/// Stage two. Without `one_stage` the encoders come from the stage-one
/// checkpoints and stay frozen; with it every parameter trains jointly and
/// the encoder checkpoints are optional initializations.
inline Stage2Result train_stage2(const Corpus& corpus, const Checkpoint* enc_ir, const Checkpoint* enc_vi,
                                 FuseConfig cfg, const LogSink& log = {}) {
    cfg.stage = 2;
    cfg.validate();
    if (corpus.empty()) throw ArgumentError("train_stage2: empty corpus");
    if (!cfg.one_stage && (!enc_ir || !enc_vi)) throw ArgumentError("train_stage2: encoder checkpoints are required");
    Rng rng(cfg.seed);
    const LossWeights w = LossWeights::from_config(cfg);
    const FusionNet net(cfg);
    ParamStore store;
    net.init(store, rng);
    if (enc_ir) load_encoder(store, *enc_ir, Modality::ir);
    if (enc_vi) load_encoder(store, *enc_vi, Modality::vi);
    if (!cfg.one_stage) {
        store.set_trainable(encoder_prefix(Modality::ir) + ".", false);
        store.set_trainable(encoder_prefix(Modality::vi) + ".", false);
    }

    Stage2Result result;
    BatchSampler sampler(corpus.size(), cfg.batch_size);
    const std::size_t spe = steps_per_epoch(cfg, corpus.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        for (std::size_t s = 0; s < spe; ++s, ++step) {
            const auto batch = sampler.next(rng);
            Graph g;
            const CamLoss l = fusion_batch_loss(g, net, store, corpus, batch, w);
            backward(l.total, store);
            clip_grad_norm(store, cfg.grad_clip);
            sgd_step(store, lr, cfg.momentum);
            LogEntry e{step, 2, lr, l.total.value()[0], l.intensity.value()[0], l.gradient.value()[0]};
            result.log.push_back(e);
            if (log) log(e);
        }
    }
    store.set_trainable("", true);
    result.model = Checkpoint::capture(kKindFusion, cfg, store, step, rng);
    return result;
}

// -------------------------------------------------------------- inference

/// Reflect-pads an H x W image so both sides are multiples of `m`.
inline Tensor pad_to_multiple(const Tensor& img, std::size_t m) {
    const std::size_t H = img.dim(0), W = img.dim(1);
    const std::size_t PH = (H + m - 1) / m * m, PW = (W + m - 1) / m * m;
    if (PH == H && PW == W) return img;
    Tensor out({PH, PW});
    for (std::size_t y = 0; y < PH; ++y)
        for (std::size_t x = 0; x < PW; ++x) out.at(y, x) = img.at(reflect_index(long(y), H), reflect_index(long(x), W));
    return out;
}

inline Tensor crop(const Tensor& img, std::size_t H, std::size_t W) {
    if (img.dim(0) == H && img.dim(1) == W) return img;
    Tensor out({H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out.at(y, x) = img.at(y, x);
    return out;
}

/// Fuses two same-sized grayscale images of any size (padded internally to
/// the encoder's stride).
inline Tensor fuse_gray(const FusionNet& net, ParamStore& store, const Tensor& ir, const Tensor& vi) {
    ir.require_rank(2, "fuse");
    vi.require_rank(2, "fuse");
    if (ir.shape() != vi.shape()) throw ShapeError("fuse: infrared " + shape_string(ir.shape()) + " vs visible " + shape_string(vi.shape()));
    const Tensor f = fuse_images(net, store, pad_to_multiple(ir, kEncoderDownscale), pad_to_multiple(vi, kEncoderDownscale));
    return crop(f, ir.dim(0), ir.dim(1));
}

struct ColorFusion {
    YCrCb planes;  // fused luma, visible chroma
    Tensor rgb;
};

/// Color visible input: fuse its luma with the infrared image and carry the
/// visible Cr/Cb planes over unchanged.
inline ColorFusion fuse_color(const FusionNet& net, ParamStore& store, const Tensor& ir, const Tensor& vi_rgb) {
    YCrCb p = rgb_to_ycrcb(vi_rgb);
    p.y = fuse_gray(net, store, to_gray(ir), p.y);
    ColorFusion out{std::move(p), {}};
    out.rgb = ycrcb_to_rgb(out.planes);
    return out;
}

}  // namespace xfuse
