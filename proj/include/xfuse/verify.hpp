#pragma once

// Self-checks shared by the CLI and the test suites: gradient checks of the
// whole pipeline and of each differentiable primitive, and inspection of
// ablation variants.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xfuse/grad_check.hpp"
#include "xfuse/losses.hpp"
#include "xfuse/model.hpp"

namespace xfuse {

struct NamedCheck {
    std::string name;
    GradCheckReport report;
};

inline Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

struct PipelineCheckResult {
    GradCheckReport report;
    std::size_t param_tensors = 0;
    std::size_t param_scalars = 0;
    double seconds = 0.0;
};

/// Gradient check of the full fusion network under loss_cam on a random
/// size x size pair. Every parameter, encoders included, is checked.
inline PipelineCheckResult pipeline_grad_check(const GradCheckOptions& opt = {}, FuseConfig cfg = {},
                                               std::size_t size = 16) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(opt.seed);
    const FusionNet net(cfg);
    ParamStore store;
    net.init(store, rng);
    const Tensor ir = random_uniform({size, size}, 0.0, 1.0, rng);
    const Tensor vi = random_uniform({size, size}, 0.0, 1.0, rng);
    const LossWeights w = LossWeights::from_config(cfg);
    PipelineCheckResult r;
    r.param_tensors = store.size();
    r.param_scalars = store.scalar_count();
    r.report = grad_check(
        [&](Graph& g) { return loss_cam(net.fuse(g, store, g.constant(ir), g.constant(vi)), ir, vi, w).total; }, store,
        opt);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Tolerances for single primitives. Central differences carry roundoff of
/// about 1e-16 |f| / eps, so gradients below 1e-5 are compared in absolute terms.
inline GradCheckOptions primitive_check_options() {
    GradCheckOptions o;
    o.tol = 1e-6;
    o.abs_floor = 1e-5;
    return o;
}

/// Central-difference checks of each primitive under a random linear
/// read-out, so gradients are O(1) and relative errors meaningful.
inline std::vector<NamedCheck> primitive_grad_checks(GradCheckOptions opt = primitive_check_options()) {
    struct Case {
        std::string name;
        std::vector<std::pair<std::string, Tensor>> inputs;
        std::function<Var(Graph&, ParamStore&)> build;
    };
    Rng rng(opt.seed);
    auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_uniform(std::move(s), lo, hi, rng); };
    auto P = [](Graph& g, ParamStore& s, const char* n) { return g.param(s, n); };

    std::vector<Case> cases;
    cases.push_back({"conv2d_same", {{"x", rnd({3, 6, 6})}, {"w", rnd({4, 3, 3, 3})}, {"b", rnd({4})}},
                     [&](Graph& g, ParamStore& s) { return conv2d_same(P(g, s, "x"), P(g, s, "w"), P(g, s, "b")); }});
    cases.push_back({"conv2d_1x1", {{"x", rnd({5, 4, 4})}, {"w", rnd({2, 5, 1, 1})}, {"b", rnd({2})}},
                     [&](Graph& g, ParamStore& s) { return conv2d_same(P(g, s, "x"), P(g, s, "w"), P(g, s, "b")); }});
    cases.push_back({"maxpool2", {{"x", rnd({2, 6, 6})}}, [&](Graph& g, ParamStore& s) { return maxpool2(P(g, s, "x")); }});
    cases.push_back({"upsample2", {{"x", rnd({2, 3, 3})}}, [&](Graph& g, ParamStore& s) { return upsample2(P(g, s, "x")); }});
    cases.push_back({"concat_channels", {{"a", rnd({2, 3, 3})}, {"b", rnd({1, 3, 3})}},
                     [&](Graph& g, ParamStore& s) { return concat_channels({P(g, s, "a"), P(g, s, "b")}); }});
    cases.push_back({"mean_filter", {{"x", rnd({1, 7, 7})}}, [&](Graph& g, ParamStore& s) { return mean_filter(P(g, s, "x"), 3); }});
    cases.push_back({"cyclic_shift", {{"x", rnd({2, 4, 5})}}, [&](Graph& g, ParamStore& s) { return cyclic_shift(P(g, s, "x"), 2, 3); }});
    cases.push_back({"matmul", {{"a", rnd({3, 4})}, {"b", rnd({4, 5})}},
                     [&](Graph& g, ParamStore& s) { return matmul(P(g, s, "a"), P(g, s, "b")); }});
    cases.push_back({"linear", {{"x", rnd({3, 4})}, {"w", rnd({4, 2})}, {"b", rnd({2})}},
                     [&](Graph& g, ParamStore& s) { return linear(P(g, s, "x"), P(g, s, "w"), P(g, s, "b")); }});
    cases.push_back({"softmax", {{"x", rnd({4, 6}, -2.0, 2.0)}}, [&](Graph& g, ParamStore& s) { return rowwise_softmax(P(g, s, "x")); }});
    cases.push_back({"re_softmax", {{"x", rnd({4, 6}, -2.0, 2.0)}}, [&](Graph& g, ParamStore& s) { return re_softmax(P(g, s, "x")); }});
    cases.push_back({"layer_norm", {{"x", rnd({3, 8})}, {"gamma", rnd({8})}, {"beta", rnd({8})}},
                     [&](Graph& g, ParamStore& s) { return layer_norm(P(g, s, "x"), P(g, s, "gamma"), P(g, s, "beta")); }});
    cases.push_back({"gelu", {{"x", rnd({10}, -3.0, 3.0)}}, [&](Graph& g, ParamStore& s) { return gelu(P(g, s, "x")); }});
    cases.push_back({"sigmoid", {{"x", rnd({10}, -3.0, 3.0)}}, [&](Graph& g, ParamStore& s) { return sigmoid(P(g, s, "x")); }});
    cases.push_back({"relu", {{"x", rnd({10})}}, [&](Graph& g, ParamStore& s) { return relu(P(g, s, "x")); }});
    cases.push_back({"div", {{"a", rnd({6})}, {"b", rnd({6}, 0.5, 2.0)}},
                     [&](Graph& g, ParamStore& s) { return div(P(g, s, "a"), P(g, s, "b")); }});
    cases.push_back({"maximum", {{"a", rnd({8})}, {"b", rnd({8})}},
                     [&](Graph& g, ParamStore& s) { return maximum(P(g, s, "a"), P(g, s, "b")); }});
    cases.push_back({"tokens", {{"x", rnd({3, 2, 4})}},
                     [&](Graph& g, ParamStore& s) { return from_tokens(matmul(to_tokens(P(g, s, "x")), g.constant(Tensor({3, 3}, 0.5))), 2, 4); }});
    cases.push_back({"skip_fuse_deep", {{"c", rnd({2, 4, 4})}, {"ir", rnd({2, 4, 4}, 0.1, 1.0)}, {"vi", rnd({2, 4, 4}, 0.1, 1.0)}},
                     [&](Graph& g, ParamStore& s) {
                         return skip_fuse(P(g, s, "c"), {P(g, s, "ir"), P(g, s, "vi")}, SkipLevel::deep);
                     }});
    cases.push_back({"skip_fuse_shallow", {{"c", rnd({2, 4, 4})}, {"ir", rnd({2, 4, 4}, 0.1, 0.9)}, {"vi", rnd({2, 4, 4}, 0.1, 0.9)}},
                     [&](Graph& g, ParamStore& s) {
                         return skip_fuse(P(g, s, "c"), {P(g, s, "ir"), P(g, s, "vi")}, SkipLevel::shallow);
                     }});
    cases.push_back({"ssim", {{"a", rnd({12, 12}, 0.0, 1.0)}, {"b", rnd({12, 12}, 0.0, 1.0)}},
                     [&](Graph& g, ParamStore& s) { return ssim(P(g, s, "a"), P(g, s, "b")); }});
    cases.push_back({"mse", {{"a", rnd({5, 5})}, {"b", rnd({5, 5})}},
                     [&](Graph& g, ParamStore& s) { return mse(P(g, s, "a"), P(g, s, "b")); }});

    std::vector<NamedCheck> out;
    for (auto& c : cases) {
        ParamStore store;
        for (auto& [n, t] : c.inputs) store.add(n, t);
        // Read-out weights are drawn once per case from the output shape.
        Tensor probe;
        {
            Graph g(false);
            probe = c.build(g, store).value();
        }
        const Tensor readout = rnd(probe.shape());
        auto fn = [&](Graph& g) { return sum(mul(c.build(g, store), g.constant(readout))); };
        out.push_back({c.name, grad_check(fn, store, opt)});
    }
    return out;
}

// -------------------------------------------------------------- ablation

struct VariantInspection {
    std::string variant;
    FuseConfig config;
    std::vector<std::string> manifest;  // parameter names, sorted
    std::size_t param_scalars = 0;
    std::size_t sa_blocks_per_branch = 0;
    std::size_t ca_blocks_per_branch = 0;
    /// Over random score rows pushed through the variant's cross-attention
    /// activation: share whose largest weight sits on the row minimum / maximum.
    double argmax_is_argmin = 0.0;
    double argmax_is_argmax = 0.0;
    std::size_t probe_rows = 0;
};

namespace detail {

inline std::size_t argmax_of(std::span<const double> r) {
    return std::size_t(std::max_element(r.begin(), r.end()) - r.begin());
}
inline std::size_t argmin_of(std::span<const double> r) {
    return std::size_t(std::min_element(r.begin(), r.end()) - r.begin());
}

/// Distinct block prefixes like "cam.ir.sa_pre0" found in the manifest.
inline std::size_t count_blocks(const std::vector<std::string>& names, const std::string& branch,
                                const std::vector<std::string>& kinds) {
    std::set<std::string> blocks;
    for (const auto& n : names) {
        if (n.rfind(branch, 0) != 0) continue;
        const std::string rest = n.substr(branch.size());
        const std::string block = rest.substr(0, rest.find('.'));
        for (const auto& k : kinds)
            if (block.rfind(k, 0) == 0 && block.size() > k.size() && std::isdigit(static_cast<unsigned char>(block[k.size()])))
                blocks.insert(block);
    }
    return blocks.size();
}

}  // namespace detail

inline VariantInspection inspect_variant(const std::string& variant, FuseConfig base = {}, std::size_t rows = 10000,
                                         std::size_t row_len = 16, std::uint64_t seed = 1) {
    VariantInspection r;
    r.variant = variant;
    apply_variant(base, variant);
    base.validate();
    r.config = base;
    const FusionNet net(base);
    ParamStore store;
    Rng rng(seed);
    net.init(store, rng);
    r.manifest = store.names();
    r.param_scalars = store.scalar_count();
    r.sa_blocks_per_branch = detail::count_blocks(r.manifest, "cam.ir.", {"sa_pre", "sa_post"});
    r.ca_blocks_per_branch = detail::count_blocks(r.manifest, "cam.ir.", {"ca"});
    if (const Cam* cam = net.cam()) {
        const Tensor scores = random_uniform({rows, row_len}, -4.0, 4.0, rng);
        const Tensor weights = attention_weights(scores, cam->ca_activation());
        std::size_t on_min = 0, on_max = 0;
        for (std::size_t i = 0; i < rows; ++i) {
            const auto s = scores.data().subspan(i * row_len, row_len);
            const auto w = weights.data().subspan(i * row_len, row_len);
            const std::size_t top = detail::argmax_of(w);
            on_min += top == detail::argmin_of(s);
            on_max += top == detail::argmax_of(s);
        }
        r.argmax_is_argmin = double(on_min) / double(rows);
        r.argmax_is_argmax = double(on_max) / double(rows);
        r.probe_rows = rows;
    }
    return r;
}

}  // namespace xfuse
