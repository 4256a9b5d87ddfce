#pragma once

// Hyperparameters for the network, the losses and the training schedule, with
// a canonical "key = value" text form used by config files and checkpoints.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "xfuse/tensor.hpp"

namespace xfuse {

enum class FusionModule { cam, cnn, dense };

inline std::string to_string(FusionModule m) {
    switch (m) {
        case FusionModule::cam: return "cam";
        case FusionModule::cnn: return "cnn";
        case FusionModule::dense: return "dense";
    }
    return "cam";
}

inline FusionModule fusion_module_from_string(std::string_view s) {
    if (s == "cam") return FusionModule::cam;
    if (s == "cnn") return FusionModule::cnn;
    if (s == "dense") return FusionModule::dense;
    throw ArgumentError("unknown fusion module: " + std::string(s));
}

struct FuseConfig {
    // architecture
    std::size_t sa_blocks = 1;  // per position, i.e. before and after the shift
    std::size_t ca_blocks = 1;
    bool re_softmax = true;
    bool shift = true;
    FusionModule fusion = FusionModule::cam;

    // losses
    double w_ssim = 1e4;
    double w_grad = 10.0;

    // schedule
    int stage = 1;
    bool one_stage = false;
    std::size_t epochs = 4;
    std::size_t batch_size = 2;
    /// 0 means one pass over the corpus per epoch.
    std::size_t steps_per_epoch = 0;
    double lr0 = 0.01;
    double lr_decay = 0.1;
    std::size_t decay_every = 2;
    double momentum = 0.9;
    /// Global gradient-norm cap applied before each step; 0 disables it.
    double grad_clip = 1.0;
    std::size_t image_size = 64;
    std::uint64_t seed = 42;

    /// Stage-dependent defaults for epochs and batch size.
    static FuseConfig for_stage(int stage) {
        FuseConfig c;
        c.stage = stage;
        if (stage == 2) {
            c.epochs = 8;
            c.batch_size = 8;
        }
        return c;
    }

    std::string canonical_text() const;
    void set(const std::string& key, const std::string& value);
    void validate() const;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ArgumentError("config: bad number for " + key + ": " + s);
    return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ArgumentError("config: bad integer for " + key + ": " + s);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ArgumentError("config: bad boolean for " + key + ": " + s);
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

struct ConfigField {
    std::function<std::string(const FuseConfig&)> get;
    std::function<void(FuseConfig&, const std::string&)> set;
};

inline const std::map<std::string, ConfigField>& config_fields() {
    static const std::map<std::string, ConfigField> fields = [] {
        std::map<std::string, ConfigField> f;
        auto size_field = [](std::size_t FuseConfig::*m) {
            return ConfigField{[m](const FuseConfig& c) { return std::to_string(c.*m); },
                               [m](FuseConfig& c, const std::string& v) { c.*m = parse_uint("", v); }};
        };
        auto double_field = [](double FuseConfig::*m) {
            return ConfigField{[m](const FuseConfig& c) { return format_double(c.*m); },
                               [m](FuseConfig& c, const std::string& v) { c.*m = parse_double("", v); }};
        };
        auto bool_field = [](bool FuseConfig::*m) {
            return ConfigField{[m](const FuseConfig& c) { return std::string(c.*m ? "true" : "false"); },
                               [m](FuseConfig& c, const std::string& v) { c.*m = parse_bool("", v); }};
        };
        f["sa_blocks"] = size_field(&FuseConfig::sa_blocks);
        f["ca_blocks"] = size_field(&FuseConfig::ca_blocks);
        f["re_softmax"] = bool_field(&FuseConfig::re_softmax);
        f["shift"] = bool_field(&FuseConfig::shift);
        f["fusion"] = {[](const FuseConfig& c) { return to_string(c.fusion); },
                       [](FuseConfig& c, const std::string& v) { c.fusion = fusion_module_from_string(v); }};
        f["w_ssim"] = double_field(&FuseConfig::w_ssim);
        f["w_grad"] = double_field(&FuseConfig::w_grad);
        f["stage"] = {[](const FuseConfig& c) { return std::to_string(c.stage); },
                      [](FuseConfig& c, const std::string& v) { c.stage = int(parse_uint("stage", v)); }};
        f["one_stage"] = bool_field(&FuseConfig::one_stage);
        f["epochs"] = size_field(&FuseConfig::epochs);
        f["batch_size"] = size_field(&FuseConfig::batch_size);
        f["steps_per_epoch"] = size_field(&FuseConfig::steps_per_epoch);
        f["lr0"] = double_field(&FuseConfig::lr0);
        f["lr_decay"] = double_field(&FuseConfig::lr_decay);
        f["decay_every"] = size_field(&FuseConfig::decay_every);
        f["momentum"] = double_field(&FuseConfig::momentum);
        f["grad_clip"] = double_field(&FuseConfig::grad_clip);
        f["image_size"] = size_field(&FuseConfig::image_size);
        f["seed"] = {[](const FuseConfig& c) { return std::to_string(c.seed); },
                     [](FuseConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); }};
        return f;
    }();
    return fields;
}

}  // namespace detail

/// One "key = value" line per field, keys sorted.
inline std::string FuseConfig::canonical_text() const {
    std::string out;
    for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

inline void FuseConfig::set(const std::string& key, const std::string& value) {
    const auto& fields = detail::config_fields();
    auto it = fields.find(key);
    if (it == fields.end()) throw ArgumentError("config: unknown key '" + key + "'");
    try {
        it->second.set(*this, value);
    } catch (const ArgumentError&) {
        throw ArgumentError("config: bad value for '" + key + "': " + value);
    }
}

inline void FuseConfig::validate() const {
    if (stage != 1 && stage != 2) throw ArgumentError("config: stage must be 1 or 2");
    if (epochs == 0 || batch_size == 0 || decay_every == 0) throw ArgumentError("config: epochs, batch_size and decay_every must be positive");
    if (!(lr0 > 0.0)) throw ArgumentError("config: lr0 must be positive");
    if (!(w_ssim > 0.0) || !(w_grad >= 0.0)) throw ArgumentError("config: loss weights must be positive");
    if (image_size < 32 || image_size % 8 != 0) throw ArgumentError("config: image_size must be a multiple of 8, >= 32");
    if (fusion == FusionModule::cam && (sa_blocks == 0 || ca_blocks == 0))
        throw ArgumentError("config: attention block counts must be positive");
}

/// Applies `key = value` lines; '#' starts a comment. Unknown keys throw.
inline void apply_config_text(FuseConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        cfg.set(detail::trim(std::string_view(t).substr(0, eq)), detail::trim(std::string_view(t).substr(eq + 1)));
    }
}

inline FuseConfig parse_config_text(const std::string& text, FuseConfig base = {}) {
    apply_config_text(base, text);
    return base;
}

inline void apply_config_file(FuseConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ArgumentError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str());
}

/// Named architecture / training variants from the ablation study.
inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{"s1-c1",   "s2-c2",    "s3-c3",      "no-resoftmax",
                                            "no-shift", "fuse-cnn", "fuse-dense", "one-stage"};
    return v;
}

inline void apply_variant(FuseConfig& cfg, const std::string& variant) {
    if (variant == "s1-c1" || variant == "s2-c2" || variant == "s3-c3") {
        const std::size_t n = std::size_t(variant[1] - '0');
        cfg.sa_blocks = n;
        cfg.ca_blocks = n;
    } else if (variant == "no-resoftmax") {
        cfg.re_softmax = false;
    } else if (variant == "no-shift") {
        cfg.shift = false;
    } else if (variant == "fuse-cnn") {
        cfg.fusion = FusionModule::cnn;
    } else if (variant == "fuse-dense") {
        cfg.fusion = FusionModule::dense;
    } else if (variant == "one-stage") {
        cfg.one_stage = true;
    } else {
        throw ArgumentError("unknown ablation variant: " + variant);
    }
}

}  // namespace xfuse
