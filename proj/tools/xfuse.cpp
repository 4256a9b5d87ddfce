// xfuse: training, fusion, evaluation and self-checks from the command line.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "xfuse/xfuse.hpp"

namespace fs = std::filesystem;
using namespace xfuse;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kIo = 3,
    kBadCheckpoint = 4,
    kShape = 5,
    kCheckFailed = 6,
    kNoData = 7,
};

class NoData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainFlags {
    std::string data;
    std::size_t synthetic = 0;
    std::string config_file;
    std::string log_file;
    std::optional<std::size_t> epochs, batch, size, steps_per_epoch;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr0, grad_clip;
    std::vector<std::string> set;

    void add_to(CLI::App* app) {
        auto* data_opt = app->add_option("--data", data, "Directory of <stem>_ir / <stem>_vi image pairs");
        auto* syn_opt = app->add_option("--synthetic", synthetic, "Train on N generated pairs instead of --data");
        data_opt->excludes(syn_opt);
        app->add_option("--config", config_file, "key = value config file");
        app->add_option("--log", log_file, "Append the per-step training log to this file (default: stdout)");
        app->add_option("--epochs", epochs);
        app->add_option("--batch", batch);
        app->add_option("--size", size, "Training image side length");
        app->add_option("--seed", seed);
        app->add_option("--steps-per-epoch", steps_per_epoch);
        app->add_option("--lr", lr0, "Initial learning rate");
        app->add_option("--grad-clip", grad_clip, "Global gradient-norm cap (0 disables)");
        app->add_option("--set", set, "Extra key=value config overrides")->take_all();
    }

    /// Defaults, then the config file, then explicit flags.
    void apply(FuseConfig& cfg) const {
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        for (const auto& kv : set) apply_config_text(cfg, kv);
        if (epochs) cfg.epochs = *epochs;
        if (batch) cfg.batch_size = *batch;
        if (size) cfg.image_size = *size;
        if (seed) cfg.seed = *seed;
        if (steps_per_epoch) cfg.steps_per_epoch = *steps_per_epoch;
        if (lr0) cfg.lr0 = *lr0;
        if (grad_clip) cfg.grad_clip = *grad_clip;
        cfg.validate();
    }

    Corpus corpus(const FuseConfig& cfg) const {
        if (synthetic > 0) return synthetic_corpus(synthetic, cfg.image_size, cfg.seed);
        if (data.empty()) throw ArgumentError("one of --data or --synthetic is required");
        Corpus c = load_corpus(data, cfg.image_size);
        for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";
        return c;
    }
};

class LogTarget {
public:
    explicit LogTarget(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::app);
            if (!file_) throw ImageError("cannot open log file " + path);
        }
    }
    LogSink sink() { return stream_log(file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout); }

private:
    std::ofstream file_;
};

/// "out/ae.ckpt" -> "out/ae_ir.ckpt"
std::string with_modality(const std::string& path, Modality m) {
    fs::path p(path);
    const std::string name = p.stem().string() + "_" + to_string(m) + p.extension().string();
    return (p.parent_path() / name).string();
}

std::string stem_without(const fs::path& f, const std::string& suffix) {
    std::string s = f.stem().string();
    if (!suffix.empty() && s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
        s.resize(s.size() - suffix.size());
    return s;
}

/// Image files in `dir` keyed by stem, with an optional modality suffix removed.
std::map<std::string, fs::path> images_by_stem(const std::string& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) throw ImageError("not a directory: " + dir);
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext != ".pgm" && ext != ".ppm" && ext != ".pnm" && ext != ".png") continue;
        out.emplace(stem_without(e.path(), suffix), e.path());
    }
    return out;
}

void print_check(const std::string& name, const GradCheckReport& r, double tol) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << name << " max_rel_error=" << r.max_rel_error << " tol=" << tol
              << " checked=" << r.checked << " kinks_skipped=" << r.skipped_kinks;
    if (!r.passed && r.checked > 0)
        std::cout << " worst=" << r.worst.name << "[" << r.worst.index << "] analytic=" << r.worst.analytic
                  << " numeric=" << r.worst.numeric;
    std::cout << "\n";
}

void print_inspection(const VariantInspection& v) {
    std::cout << "variant " << v.variant << ": fusion=" << to_string(v.config.fusion)
              << " sa_blocks_per_branch=" << v.sa_blocks_per_branch << " ca_blocks_per_branch=" << v.ca_blocks_per_branch
              << " re_softmax=" << (v.config.re_softmax ? "on" : "off") << " shift=" << (v.config.shift ? "on" : "off")
              << " one_stage=" << (v.config.one_stage ? "yes" : "no") << " param_tensors=" << v.manifest.size()
              << " param_scalars=" << v.param_scalars << "\n";
    if (v.probe_rows > 0)
        std::cout << "attention probe over " << v.probe_rows << " rows: argmax(weights)==argmin(scores) "
                  << v.argmax_is_argmin << ", argmax(weights)==argmax(scores) " << v.argmax_is_argmax << "\n";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ImageError("cannot open " + path + " for writing");
    f << text;
    if (!f) throw ImageError("write failed for " + path);
}

// -------------------------------------------------------------- commands

int cmd_train_auto(const TrainFlags& flags, const std::string& out) {
    FuseConfig cfg = FuseConfig::for_stage(1);
    flags.apply(cfg);
    const Corpus corpus = flags.corpus(cfg);
    LogTarget log(flags.log_file);
    const Stage1Result r = train_stage1(corpus, cfg, log.sink());
    if (auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_checkpoint(with_modality(out, Modality::ir), r.ir);
    save_checkpoint(with_modality(out, Modality::vi), r.vi);
    std::cerr << "wrote " << with_modality(out, Modality::ir) << " and " << with_modality(out, Modality::vi) << "\n";
    return kOk;
}

int cmd_train_fuse(const TrainFlags& flags, const std::string& enc_ir, const std::string& enc_vi, const std::string& out,
                   bool one_stage, const std::string& variant) {
    FuseConfig cfg = FuseConfig::for_stage(2);
    if (!variant.empty()) apply_variant(cfg, variant);
    if (one_stage) cfg.one_stage = true;
    flags.apply(cfg);
    std::optional<Checkpoint> ir, vi;
    if (!enc_ir.empty()) ir = load_checkpoint(enc_ir);
    if (!enc_vi.empty()) vi = load_checkpoint(enc_vi);
    if (!cfg.one_stage && (!ir || !vi)) throw ArgumentError("--enc-ir and --enc-vi are required unless --one-stage");
    const Corpus corpus = flags.corpus(cfg);
    LogTarget log(flags.log_file);
    const Stage2Result r = train_stage2(corpus, ir ? &*ir : nullptr, vi ? &*vi : nullptr, cfg, log.sink());
    if (auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_checkpoint(out, r.model);
    std::cerr << "wrote " << out << "\n";
    return kOk;
}

int cmd_fuse(const std::string& ir_path, const std::string& vi_path, const std::string& model_path, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const FusionNet net(ckpt.config);
    ParamStore store = load_fusion_store(net, ckpt);
    const Tensor ir = to_gray(read_image(ir_path));
    const Tensor vi = read_image(vi_path);
    const bool color = is_color(vi);
    const std::size_t vh = color ? vi.dim(1) : vi.dim(0), vw = color ? vi.dim(2) : vi.dim(1);
    if (ir.dim(0) != vh || ir.dim(1) != vw)
        throw ShapeError("infrared is " + std::to_string(ir.dim(1)) + "x" + std::to_string(ir.dim(0)) + ", visible is " +
                         std::to_string(vw) + "x" + std::to_string(vh));
    if (color) {
        const ColorFusion f = fuse_color(net, store, ir, vi);
        const std::string ext = fs::path(out).extension().string();
        write_image(out, ext == ".pgm" ? f.planes.y : f.rgb);
    } else {
        write_image(out, fuse_gray(net, store, ir, vi));
    }
    return kOk;
}

int cmd_eval(const std::string& fused_dir, const std::string& ir_dir, const std::string& vi_dir, const std::string& out) {
    const auto fused = images_by_stem(fused_dir, "_fused");
    const auto ir = images_by_stem(ir_dir, "_ir");
    const auto vi = images_by_stem(vi_dir, "_vi");
    std::size_t warnings = 0;
    MetricReport report;
    for (const auto& [stem, fpath] : fused) {
        auto a = ir.find(stem);
        auto b = vi.find(stem);
        if (a == ir.end() || b == vi.end()) {
            std::cerr << "warning: no matching " << (a == ir.end() ? "infrared" : "visible") << " image for '" << stem
                      << "', skipped\n";
            ++warnings;
            continue;
        }
        const Tensor F = to_gray(read_image(fpath.string()));
        const Tensor A = to_gray(read_image(a->second.string()));
        const Tensor B = to_gray(read_image(b->second.string()));
        report.rows.emplace_back(stem, evaluate_metrics(F, A, B));
    }
    for (const auto& [stem, _] : ir)
        if (!fused.count(stem)) {
            std::cerr << "warning: infrared image '" << stem << "' has no fused counterpart, skipped\n";
            ++warnings;
        }
    if (report.rows.empty()) throw NoData("no stems common to all three directories");
    write_text(out, report.csv());
    std::cerr << "evaluated " << report.rows.size() << " pairs, " << warnings << " warnings\n";
    return kOk;
}

int cmd_grad_check(double tol, std::uint64_t seed, double eps, std::size_t samples, std::size_t size,
                   const std::string& variant, bool primitives) {
    bool ok = true;
    if (primitives) {
        GradCheckOptions po = primitive_check_options();
        po.seed = seed;
        po.eps = eps;
        for (const auto& c : primitive_grad_checks(po)) {
            print_check("primitive " + c.name, c.report, po.tol);
            ok = ok && c.report.passed;
        }
    }
    FuseConfig cfg;
    apply_variant(cfg, variant);
    GradCheckOptions opt;
    opt.tol = tol;
    opt.seed = seed;
    opt.eps = eps;
    opt.samples_per_tensor = samples;
    const PipelineCheckResult r = pipeline_grad_check(opt, cfg, size);
    print_check("pipeline " + variant + " " + std::to_string(size) + "x" + std::to_string(size), r.report, tol);
    std::cout << "pipeline parameters: " << r.param_tensors << " tensors, " << r.param_scalars << " scalars; "
              << r.seconds << " s\n";
    ok = ok && r.report.passed;
    return ok ? kOk : kCheckFailed;
}

int cmd_ablate(const std::string& variant, const TrainFlags& flags, bool inspect_only, const std::string& out) {
    FuseConfig fuse_cfg = FuseConfig::for_stage(2);
    apply_variant(fuse_cfg, variant);
    print_inspection(inspect_variant(variant, fuse_cfg));
    if (inspect_only) return kOk;
    FuseConfig auto_cfg = FuseConfig::for_stage(1);
    flags.apply(auto_cfg);
    flags.apply(fuse_cfg);
    TrainFlags f = flags;
    if (f.data.empty() && f.synthetic == 0) f.synthetic = 4;
    const Corpus corpus = f.corpus(fuse_cfg);
    LogTarget log(flags.log_file);
    PipelineRun run = run_pipeline(corpus, auto_cfg, fuse_cfg, log.sink());
    for (auto& [name, _] : run.report.rows) name = variant + ":" + name;
    const std::string csv = run.report.csv();
    if (out.empty()) std::cout << csv;
    else write_text(out, csv);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infrared / visible image fusion with cross-attention"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    TrainFlags auto_flags, fuse_flags, ablate_flags;
    std::string out, enc_ir, enc_vi, ir, vi, model, fused_dir, variant, stage2_variant;
    bool one_stage = false, inspect_only = false, no_primitives = false;
    double tol = 1e-3, eps = 1e-5;
    std::uint64_t check_seed = 7;
    std::size_t samples = 32, check_size = 16;
    std::string check_variant = "s1-c1";

    auto* train_auto = app.add_subcommand("train-auto", "Stage one: train the infrared and visible autoencoders");
    auto_flags.add_to(train_auto);
    train_auto->add_option("--out", out, "Checkpoint path; writes <name>_ir<ext> and <name>_vi<ext>")->required();

    auto* train_fuse = app.add_subcommand("train-fuse", "Stage two: train the fusion module and decoder");
    fuse_flags.add_to(train_fuse);
    train_fuse->add_option("--enc-ir", enc_ir, "Stage-one infrared checkpoint");
    train_fuse->add_option("--enc-vi", enc_vi, "Stage-one visible checkpoint");
    train_fuse->add_option("--out", out, "Output checkpoint")->required();
    train_fuse->add_flag("--one-stage", one_stage, "Train every parameter jointly from scratch");
    train_fuse->add_option("--variant", stage2_variant, "Ablation variant")->check(CLI::IsMember(ablation_variants()));

    auto* fuse = app.add_subcommand("fuse", "Fuse one infrared / visible pair");
    fuse->add_option("--ir", ir, "Infrared image")->required();
    fuse->add_option("--vi", vi, "Visible image (gray or RGB)")->required();
    fuse->add_option("--model", model, "Fusion checkpoint")->required();
    fuse->add_option("--out", out, "Output image (.pgm, .ppm or .png)")->required();

    auto* eval = app.add_subcommand("eval", "Score fused images against their sources");
    eval->add_option("--fused", fused_dir, "Fused images")->required();
    eval->add_option("--ir", ir, "Infrared images")->required();
    eval->add_option("--vi", vi, "Visible images")->required();
    eval->add_option("--out", out, "CSV report")->required();

    auto* grad = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
    grad->add_option("--tol", tol, "Pipeline relative-error tolerance")->capture_default_str();
    grad->add_option("--seed", check_seed)->capture_default_str();
    grad->add_option("--eps", eps, "Finite-difference step")->capture_default_str();
    grad->add_option("--samples", samples, "Coordinates per parameter tensor")->capture_default_str();
    grad->add_option("--size", check_size, "Input side length")->capture_default_str();
    grad->add_option("--variant", check_variant)->check(CLI::IsMember(ablation_variants()))->capture_default_str();
    grad->add_flag("--no-primitives", no_primitives, "Skip the per-primitive checks");

    auto* ablate = app.add_subcommand("ablate", "Build, train and score an ablation variant");
    ablate->add_option("--variant", variant)->required()->check(CLI::IsMember(ablation_variants()));
    ablate_flags.add_to(ablate);
    ablate->add_flag("--inspect", inspect_only, "Only report the architecture and the attention probe");
    ablate->add_option("--out", out, "CSV report (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*train_auto) return cmd_train_auto(auto_flags, out);
        if (*train_fuse) return cmd_train_fuse(fuse_flags, enc_ir, enc_vi, out, one_stage, stage2_variant);
        if (*fuse) return cmd_fuse(ir, vi, model, out);
        if (*eval) return cmd_eval(fused_dir, ir, vi, out);
        if (*grad) return cmd_grad_check(tol, check_seed, eps, samples, check_size, check_variant, !no_primitives);
        if (*ablate) return cmd_ablate(variant, ablate_flags, inspect_only, out);
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kBadCheckpoint;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kShape;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NoData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNoData;
    } catch (const ImageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
