#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "xfuse/checkpoint.hpp"
#include "xfuse/data.hpp"
#include "xfuse/optim.hpp"
#include "xfuse/trainer.hpp"
#include "xfuse/verify.hpp"

using namespace xfuse;
namespace fs = std::filesystem;

namespace {

Tensor rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return random_uniform(std::move(s), lo, hi, rng);
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("xfuse_trainer_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(s.data(), std::streamsize(s.size()));
}

FuseConfig tiny_config(int stage, std::size_t steps) {
    FuseConfig cfg = FuseConfig::for_stage(stage);
    cfg.image_size = 32;
    cfg.epochs = 1;
    cfg.steps_per_epoch = steps;
    cfg.batch_size = 2;
    cfg.seed = 7;
    return cfg;
}

const Corpus& tiny_corpus() {
    static const Corpus c = synthetic_corpus(2, 32, 11);
    return c;
}

const Stage1Result& tiny_stage1() {
    static const Stage1Result r = train_stage1(tiny_corpus(), tiny_config(1, 3));
    return r;
}

LoadErrorKind load_error_kind(const std::string& bytes) {
    try {
        deserialize(bytes);
    } catch (const LoadError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no LoadError thrown";
    return LoadErrorKind::io;
}

}  // namespace

// -------------------------------------------------------------------- SGD

TEST(Sgd, PlainStepSubtractsTheGradient) {
    ParamStore store;
    const Tensor p0 = rnd({5}, 1), g = rnd({5}, 2);
    store.add("p", p0).grad = g;
    sgd_step(store, 1.0, 0.0);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(store.at("p").value[i], p0[i] - g[i]);
}

TEST(Sgd, ZeroGradientDecaysVelocityOnly) {
    ParamStore store;
    store.add("p", Tensor({3}, 1.0)).grad = Tensor({3}, 1.0);
    sgd_step(store, 0.1, 0.9);
    const Tensor after_first = store.at("p").value;
    store.at("p").grad.fill(0.0);
    sgd_step(store, 0.0, 0.9);
    EXPECT_EQ(store.at("p").value, after_first);
    for (double v : store.at("p").velocity.data()) EXPECT_DOUBLE_EQ(v, 0.9);
}

TEST(Sgd, QuadraticBowlConverges) {
    // f(p) = p^2, so grad = 2p. With momentum 0.9 the iteration contracts
    // by only sqrt(0.9) per step; the 100-step bound holds for plain SGD.
    ParamStore store;
    store.add("p", Tensor({1}, 1.0));
    for (int i = 0; i < 100; ++i) {
        Parameter& p = store.at("p");
        p.grad = p.value * 2.0;
        sgd_step(store, 0.1, 0.0);
    }
    EXPECT_LT(std::abs(store.at("p").value[0]), 1e-4);
}

TEST(Sgd, QuadraticBowlWithMomentumConverges) {
    ParamStore store;
    store.add("p", Tensor({1}, 1.0));
    for (int i = 0; i < 300; ++i) {
        Parameter& p = store.at("p");
        p.grad = p.value * 2.0;
        sgd_step(store, 0.1, 0.9);
    }
    EXPECT_LT(std::abs(store.at("p").value[0]), 1e-4);
}

TEST(Sgd, MissingGradientIsAnInternalError) {
    ParamStore store;
    store.add("p", Tensor({3}, 1.0));
    store.at("p").grad = Tensor();
    EXPECT_THROW(sgd_step(store, 0.1), InternalError);
}

TEST(Sgd, FrozenParametersAreSkipped) {
    ParamStore store;
    store.add("p", Tensor({2}, 1.0), false).grad = Tensor({2}, 5.0);
    sgd_step(store, 1.0);
    EXPECT_EQ(store.at("p").value, Tensor({2}, 1.0));
}

TEST(ClipGradNorm, RescalesToTheCap) {
    ParamStore store;
    store.add("a", Tensor({1})).grad = Tensor({1}, 3.0);
    store.add("b", Tensor({1})).grad = Tensor({1}, 4.0);
    EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
    EXPECT_NEAR(grad_norm(store), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(store.at("a").grad[0], 0.6);
    EXPECT_DOUBLE_EQ(clip_grad_norm(store, 0.0), grad_norm(store));
}

// --------------------------------------------------------------- schedule

TEST(Schedule, DecaysTenfoldEveryTwoEpochs) {
    const FuseConfig cfg;
    EXPECT_EQ(learning_rate(cfg, 0), 0.01);
    EXPECT_EQ(learning_rate(cfg, 1), 0.01);
    EXPECT_EQ(learning_rate(cfg, 2), 0.01 * 0.1);
    EXPECT_EQ(learning_rate(cfg, 3), 0.01 * 0.1);
    EXPECT_EQ(learning_rate(cfg, 4), 0.01 * 0.1 * 0.1);
    EXPECT_DOUBLE_EQ(learning_rate(cfg, 2), 0.001);
    EXPECT_DOUBLE_EQ(learning_rate(cfg, 4), 0.0001);
}

TEST(Schedule, TrainingLogFollowsTheSchedule) {
    FuseConfig cfg = tiny_config(1, 1);
    cfg.epochs = 5;
    const auto log = train_stage1(tiny_corpus(), cfg).log;
    ASSERT_EQ(log.size(), 5u);
    for (std::size_t e = 0; e < 5; ++e) {
        EXPECT_EQ(log[e].lr, learning_rate(cfg, e));
        EXPECT_EQ(log[e].stage, 1);
        EXPECT_EQ(log[e].step, e);
    }
}

TEST(Schedule, StepsPerEpoch) {
    FuseConfig cfg;
    cfg.batch_size = 4;
    EXPECT_EQ(steps_per_epoch(cfg, 10), 3u);
    cfg.steps_per_epoch = 7;
    EXPECT_EQ(steps_per_epoch(cfg, 10), 7u);
}

// ------------------------------------------------------------------ config

TEST(Config, StageDefaults) {
    EXPECT_EQ(FuseConfig::for_stage(1).epochs, 4u);
    EXPECT_EQ(FuseConfig::for_stage(1).batch_size, 2u);
    EXPECT_EQ(FuseConfig::for_stage(2).epochs, 8u);
    EXPECT_EQ(FuseConfig::for_stage(2).batch_size, 8u);
    EXPECT_EQ(FuseConfig().lr0, 0.01);
}

TEST(Config, CanonicalTextRoundTrips) {
    FuseConfig cfg;
    cfg.sa_blocks = 3;
    cfg.re_softmax = false;
    cfg.fusion = FusionModule::dense;
    cfg.lr0 = 0.0123456789012345;
    cfg.seed = 1234567890123ULL;
    const FuseConfig back = parse_config_text(cfg.canonical_text());
    EXPECT_EQ(back.canonical_text(), cfg.canonical_text());
    EXPECT_EQ(back.lr0, cfg.lr0);
}

TEST(Config, CommentsBlanksAndWhitespace) {
    const FuseConfig cfg = parse_config_text("# header\n\n  epochs =  3  # trailing\nshift=false\n");
    EXPECT_EQ(cfg.epochs, 3u);
    EXPECT_FALSE(cfg.shift);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config_text("epoch = 3\n"), ArgumentError);
    EXPECT_THROW(parse_config_text("epochs = three\n"), ArgumentError);
    EXPECT_THROW(parse_config_text("epochs\n"), ArgumentError);
    EXPECT_THROW(parse_config_text("fusion = transformer\n"), ArgumentError);
    FuseConfig cfg;
    cfg.image_size = 60;
    EXPECT_THROW(cfg.validate(), ArgumentError);
    cfg.image_size = 64;
    cfg.lr0 = 0.0;
    EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(Config, Variants) {
    for (const auto& v : ablation_variants()) {
        FuseConfig cfg;
        EXPECT_NO_THROW(apply_variant(cfg, v)) << v;
        EXPECT_NO_THROW(cfg.validate()) << v;
    }
    FuseConfig cfg;
    apply_variant(cfg, "s3-c3");
    EXPECT_EQ(cfg.sa_blocks, 3u);
    EXPECT_EQ(cfg.ca_blocks, 3u);
    EXPECT_THROW(apply_variant(cfg, "s4-c4"), ArgumentError);
}

// ------------------------------------------------------------- checkpoints

TEST(Checkpoint, SaveLoadSaveIsBitwiseStable) {
    const fs::path dir = temp_dir("roundtrip");
    const Checkpoint& c = tiny_stage1().ir;
    save_checkpoint((dir / "a.xfc").string(), c);
    const Checkpoint back = load_checkpoint((dir / "a.xfc").string());
    save_checkpoint((dir / "b.xfc").string(), back);
    EXPECT_EQ(read_bytes(dir / "a.xfc"), read_bytes(dir / "b.xfc"));
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
        EXPECT_EQ(back.tensors[i].second, c.tensors[i].second);
    }
    EXPECT_EQ(back.kind, c.kind);
    EXPECT_EQ(back.step, c.step);
    EXPECT_EQ(back.config.canonical_text(), c.config.canonical_text());
    Rng a = back.restore_rng(), b = c.restore_rng();
    EXPECT_EQ(a(), b());
    fs::remove_all(dir);
}

TEST(Checkpoint, FileStartsWithMagicAndVersion) {
    const std::string bytes = serialize(tiny_stage1().vi);
    EXPECT_EQ(bytes.substr(0, 4), "XFUS");
    EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
}

TEST(Checkpoint, DistinctLoadErrors) {
    const std::string good = serialize(tiny_stage1().ir);
    for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{40}, good.size() / 2, good.size() - 1})
        EXPECT_EQ(load_error_kind(good.substr(0, cut)), LoadErrorKind::truncated) << "cut at " << cut;

    std::string bumped = good;
    bumped[4] = 2;
    EXPECT_EQ(load_error_kind(bumped), LoadErrorKind::version);

    std::string magic = good;
    magic[0] = 'Y';
    EXPECT_EQ(load_error_kind(magic), LoadErrorKind::bad_magic);

    EXPECT_EQ(load_error_kind(good + "xx"), LoadErrorKind::corrupt);

    try {
        load_checkpoint("/nonexistent/dir/model.xfc");
        ADD_FAILURE();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadErrorKind::io);
    }
}

TEST(Checkpoint, TruncatedFileOnDiskIsATruncationError) {
    const fs::path dir = temp_dir("trunc");
    const std::string good = serialize(tiny_stage1().ir);
    write_bytes(dir / "t.xfc", good.substr(0, good.size() - 100));
    try {
        load_checkpoint((dir / "t.xfc").string());
        ADD_FAILURE();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadErrorKind::truncated);
    }
    fs::remove_all(dir);
}

TEST(Checkpoint, RestoreChecksTheShapeManifest) {
    Checkpoint c = tiny_stage1().ir;
    AutoEncoder ae(Modality::ir);
    ParamStore store;
    Rng rng(0);
    ae.init(store, rng);
    EXPECT_NO_THROW(c.restore_into(store));

    c.tensors[0].second = Tensor({1, 2, 3});
    try {
        c.restore_into(store);
        ADD_FAILURE();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadErrorKind::shape_mismatch);
    }
    Checkpoint missing = tiny_stage1().ir;
    missing.tensors.pop_back();
    EXPECT_THROW(missing.restore_into(store), LoadError);
}

// ----------------------------------------------------------------- sampler

TEST(BatchSampler, CoversTheCorpusEachEpoch) {
    Rng rng(3);
    BatchSampler s(7, 3);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7; ++i)
        for (auto j : s.next(rng)) ++seen[j];
    for (int v : seen) EXPECT_EQ(v, 3);
    EXPECT_THROW(BatchSampler(0, 2), ArgumentError);
    EXPECT_EQ(BatchSampler(2, 8).next(rng).size(), 2u);
}

TEST(BatchSampler, DeterministicForASeed) {
    Rng a(5), b(5);
    BatchSampler sa(10, 4), sb(10, 4);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(sa.next(a), sb.next(b));
}

// ---------------------------------------------------------------- training

TEST(Stage1, EmptyCorpusThrows) {
    EXPECT_THROW(train_stage1(Corpus{}, tiny_config(1, 1)), ArgumentError);
}

TEST(Stage1, DeterministicCheckpoints) {
    const Stage1Result again = train_stage1(tiny_corpus(), tiny_config(1, 3));
    EXPECT_EQ(serialize(again.ir), serialize(tiny_stage1().ir));
    EXPECT_EQ(serialize(again.vi), serialize(tiny_stage1().vi));
}

TEST(Stage1, CheckpointsHoldOnlyTheirModality) {
    for (const auto& [name, _] : tiny_stage1().ir.tensors) EXPECT_TRUE(name.rfind("enc_ir.", 0) == 0 || name.rfind("dec_ir.", 0) == 0) << name;
    for (const auto& [name, _] : tiny_stage1().vi.tensors) EXPECT_TRUE(name.rfind("enc_vi.", 0) == 0 || name.rfind("dec_vi.", 0) == 0) << name;
}

TEST(Stage2, EncodersStayFrozenBitwise) {
    const Stage1Result& s1 = tiny_stage1();
    const Stage2Result s2 = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, tiny_config(2, 3));
    std::size_t compared = 0;
    for (const Checkpoint* enc : {&s1.ir, &s1.vi})
        for (const auto& [name, t] : enc->tensors) {
            if (name.rfind("enc_", 0) != 0) continue;
            const Tensor* out = s2.model.find(name);
            ASSERT_NE(out, nullptr) << name;
            EXPECT_EQ(*out, t) << name;
            ++compared;
        }
    EXPECT_GT(compared, 0u);
    EXPECT_EQ(s2.log.size(), 3u);
    for (const auto& e : s2.log) EXPECT_EQ(e.stage, 2);
}

TEST(Stage2, TrainsTheFusionHead) {
    const Stage1Result& s1 = tiny_stage1();
    const FuseConfig cfg = tiny_config(2, 2);
    const Stage2Result s2 = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, cfg);
    const FusionNet net(cfg);
    ParamStore fresh;
    Rng rng(cfg.seed);
    net.init(fresh, rng);
    std::size_t changed = 0;
    for (const auto& [name, t] : s2.model.tensors)
        if (name.rfind("enc_", 0) != 0 && t != fresh.at(name).value) ++changed;
    EXPECT_GT(changed, 0u);
}

TEST(Stage2, OneStageTrainsTheEncodersToo) {
    const Stage1Result& s1 = tiny_stage1();
    FuseConfig cfg = tiny_config(2, 2);
    cfg.one_stage = true;
    const Stage2Result s2 = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, cfg);
    std::size_t changed = 0;
    for (const auto& [name, t] : s1.ir.tensors)
        if (name.rfind("enc_", 0) == 0 && *s2.model.find(name) != t) ++changed;
    EXPECT_GT(changed, 0u);
    EXPECT_NO_THROW(train_stage2(tiny_corpus(), nullptr, nullptr, cfg));
}

TEST(Stage2, RequiresMatchingEncoderCheckpoints) {
    const Stage1Result& s1 = tiny_stage1();
    EXPECT_THROW(train_stage2(tiny_corpus(), nullptr, &s1.vi, tiny_config(2, 1)), ArgumentError);
    try {
        train_stage2(tiny_corpus(), &s1.vi, &s1.ir, tiny_config(2, 1));
        ADD_FAILURE();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadErrorKind::shape_mismatch);
    }
}

TEST(Stage2, Deterministic) {
    const Stage1Result& s1 = tiny_stage1();
    const FuseConfig cfg = tiny_config(2, 2);
    const Stage2Result a = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, cfg);
    const Stage2Result b = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, cfg);
    EXPECT_EQ(serialize(a.model), serialize(b.model));
}

TEST(Stage2, FusionCheckpointLoadsIntoAMatchingNetOnly) {
    const Stage1Result& s1 = tiny_stage1();
    const FuseConfig cfg = tiny_config(2, 1);
    const Stage2Result s2 = train_stage2(tiny_corpus(), &s1.ir, &s1.vi, cfg);
    EXPECT_NO_THROW(load_fusion_store(FusionNet(cfg), s2.model));
    FuseConfig other = cfg;
    apply_variant(other, "s2-c2");
    EXPECT_THROW(load_fusion_store(FusionNet(other), s2.model), LoadError);
    EXPECT_THROW(load_fusion_store(FusionNet(cfg), s1.ir), LoadError);
}

TEST(Log, LineFormat) {
    const LogEntry e{12, 2, 0.001, 1.5, 0.25, 0.125};
    EXPECT_EQ(e.line(), "12,2,0.001,1.5,0.25,0.125");
}
