#pragma once

// End-to-end runs: both training stages, fusion of the corpus and metrics.

#include <optional>
#include <string>

#include "xfuse/metrics.hpp"
#include "xfuse/trainer.hpp"

namespace xfuse {

struct PipelineRun {
    std::optional<Stage1Result> stage1;  // absent for one-stage training
    Stage2Result stage2;
    MetricReport report;
};

/// Trains stage one (unless `fuse_cfg.one_stage`), then stage two, then fuses
/// every pair and scores it.
inline PipelineRun run_pipeline(const Corpus& corpus, const FuseConfig& auto_cfg, const FuseConfig& fuse_cfg,
                                const LogSink& log = {}) {
    PipelineRun run;
    if (!fuse_cfg.one_stage) {
        run.stage1 = train_stage1(corpus, auto_cfg, log);
        run.stage2 = train_stage2(corpus, &run.stage1->ir, &run.stage1->vi, fuse_cfg, log);
    } else {
        run.stage2 = train_stage2(corpus, nullptr, nullptr, fuse_cfg, log);
    }
    const FusionNet net(run.stage2.model.config);
    ParamStore store = load_fusion_store(net, run.stage2.model);
    for (const auto& p : corpus.pairs)
        run.report.rows.emplace_back(p.stem, evaluate_metrics(fuse_gray(net, store, p.ir, p.vi), p.ir, p.vi));
    return run;
}

}  // namespace xfuse
