#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "xfuse/autograd.hpp"

namespace xfuse {

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-3;
    /// Coordinates drawn per tensor; tensors smaller than this are checked fully.
    std::size_t samples_per_tensor = 32;
    /// Gradients below this magnitude are compared in absolute terms.
    double abs_floor = 1e-7;
    std::uint64_t seed = 7;
    /// Extra draws allowed per tensor to replace coordinates whose
    /// perturbation crossed a kink of a non-smooth op.
    std::size_t max_redraws = 64;
};

struct GradCheckEntry {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;
    bool passed = true;
};

inline double relative_error(double analytic, double numeric, double abs_floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    return std::abs(analytic - numeric) / scale;
}

/// Compares reverse-mode gradients of `model_fn` against central differences.
///
/// model_fn builds a fresh scalar loss in the graph it is handed, reading
/// parameters from `params`. Coordinates where f(p +- eps) took a different
/// branch of a non-smooth op than f(p) are redrawn, since the difference
/// quotient is meaningless across a kink.
inline GradCheckReport grad_check(const std::function<Var(Graph&)>& model_fn, ParamStore& params,
                                  const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");

    std::uint64_t base_signature = 0;
    {
        Graph g;
        Var loss = model_fn(g);
        backward(loss, params);
        base_signature = g.kink_signature();
    }

    auto evaluate = [&](std::uint64_t& signature) {
        Graph g(false);
        Var loss = model_fn(g);
        signature = g.kink_signature();
        return loss.value()[0];
    };

    GradCheckReport report;
    std::mt19937_64 rng(opt.seed);
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        const std::size_t n = p.value.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t want = std::min(n, opt.samples_per_tensor);
        std::size_t done = 0, redraws = 0;
        for (std::size_t k = 0; k < n && done < want; ++k) {
            const std::size_t idx = order[k];
            const double saved = p.value[idx];
            std::uint64_t sig_plus = 0, sig_minus = 0;
            p.value[idx] = saved + opt.eps;
            const double f_plus = evaluate(sig_plus);
            p.value[idx] = saved - opt.eps;
            const double f_minus = evaluate(sig_minus);
            p.value[idx] = saved;
            if (sig_plus != base_signature || sig_minus != base_signature) {
                ++report.skipped_kinks;
                if (++redraws > opt.max_redraws) break;
                continue;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * opt.eps);
            const double analytic = p.grad[idx];
            GradCheckEntry e{name, idx, analytic, numeric, relative_error(analytic, numeric, opt.abs_floor)};
            ++report.checked;
            ++done;
            if (report.checked == 1 || e.rel_error > report.max_rel_error) {
                report.max_rel_error = e.rel_error;
                report.worst = e;
            }
            if (!(e.rel_error < opt.tol)) report.failures.push_back(e);
        }
    }
    report.passed = report.failures.empty() && report.checked > 0;
    return report;
}

}  // namespace xfuse
