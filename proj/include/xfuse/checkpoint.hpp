#pragma once

// Binary checkpoint container.
//
//   "XFUS"                          magic
//   u32 version
//   u32 n, n bytes                  config, canonical "key = value" text
//   u32 n, n bytes                  kind ("autoencoder-ir", "autoencoder-vi", "fusion")
//   u64 step
//   u32 n, n bytes                  RNG state (textual mt19937_64 state)
//   u32 count                       tensor manifest:
//     u32 n, n bytes name; u32 rank; rank x u64 dims
//   payloads                        raw f64 per tensor, manifest order
//
// All integers and doubles are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xfuse/autograd.hpp"
#include "xfuse/config.hpp"
#include "xfuse/layers.hpp"

namespace xfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'X', 'F', 'U', 'S'};

enum class LoadErrorKind { io, bad_magic, version, truncated, corrupt, shape_mismatch };

inline const char* to_string(LoadErrorKind k) {
    switch (k) {
        case LoadErrorKind::io: return "io";
        case LoadErrorKind::bad_magic: return "bad magic";
        case LoadErrorKind::version: return "unsupported version";
        case LoadErrorKind::truncated: return "truncated";
        case LoadErrorKind::corrupt: return "corrupt";
        case LoadErrorKind::shape_mismatch: return "shape mismatch";
    }
    return "unknown";
}

class LoadError : public std::runtime_error {
public:
    LoadError(LoadErrorKind kind, const std::string& what)
        : std::runtime_error(std::string("checkpoint ") + to_string(kind) + ": " + what), kind_(kind) {}
    LoadErrorKind kind() const noexcept { return kind_; }

private:
    LoadErrorKind kind_;
};

struct Checkpoint {
    std::string kind;
    FuseConfig config;
    std::uint64_t step = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;

    /// Snapshot of every store entry whose name starts with one of `prefixes`
    /// (all entries when empty).
    static Checkpoint capture(std::string kind, const FuseConfig& cfg, const ParamStore& store, std::uint64_t step,
                              const Rng& rng, const std::vector<std::string>& prefixes = {}) {
        Checkpoint c;
        c.kind = std::move(kind);
        c.config = cfg;
        c.step = step;
        std::ostringstream os;
        os << rng;
        c.rng_state = os.str();
        for (const auto& [name, p] : store) {
            bool keep = prefixes.empty();
            for (const auto& pre : prefixes) keep = keep || name.rfind(pre, 0) == 0;
            if (keep) c.tensors.emplace_back(name, p.value);
        }
        return c;
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    /// Copies the tensors under `prefix` into `store`, which must already hold
    /// entries with matching names and shapes.
    void restore_into(ParamStore& store, const std::string& prefix = "") const {
        std::size_t matched = 0;
        for (const auto& [name, t] : tensors) {
            if (name.rfind(prefix, 0) != 0) continue;
            if (!store.contains(name)) throw LoadError(LoadErrorKind::shape_mismatch, "unexpected tensor " + name);
            Parameter& p = store.at(name);
            if (p.value.shape() != t.shape())
                throw LoadError(LoadErrorKind::shape_mismatch, name + ": checkpoint " + shape_string(t.shape()) +
                                                                   " vs model " + shape_string(p.value.shape()));
            p.value = t;
            ++matched;
        }
        std::size_t expected = 0;
        for (const auto& [name, _] : store)
            if (name.rfind(prefix, 0) == 0) ++expected;
        if (matched != expected)
            throw LoadError(LoadErrorKind::shape_mismatch, "checkpoint holds " + std::to_string(matched) + " of " +
                                                                std::to_string(expected) + " tensors under '" + prefix + "'");
    }

    Rng restore_rng() const {
        Rng rng;
        std::istringstream is(rng_state);
        is >> rng;
        if (!is) throw LoadError(LoadErrorKind::corrupt, "unreadable RNG state");
        return rng;
    }
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

inline void put_string(std::string& out, std::string_view s) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::string get_string(const char* what, std::size_t limit) {
        const auto n = get<std::uint32_t>(what);
        if (n > limit) throw LoadError(LoadErrorKind::corrupt, std::string(what) + " length " + std::to_string(n) + " out of range");
        need(n, what);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw LoadError(LoadErrorKind::truncated, std::string("file ends inside ") + what);
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
    std::string out(kCheckpointMagic, 4);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_string(out, c.config.canonical_text());
    detail::put_string(out, c.kind);
    detail::put_le<std::uint64_t>(out, c.step);
    detail::put_string(out, c.rng_state);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        detail::put_string(out, name);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    }
    for (const auto& [_, t] : c.tensors)
        for (double v : t.data()) detail::put_le<double>(out, v);
    return out;
}

inline Checkpoint deserialize(std::string_view bytes) {
    constexpr std::size_t kMaxText = 1 << 20, kMaxName = 4096, kMaxRank = 8, kMaxTensors = 1 << 20;
    if (bytes.size() < 4) throw LoadError(LoadErrorKind::truncated, "file shorter than the magic");
    if (bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) throw LoadError(LoadErrorKind::bad_magic, "not an XFUS file");
    detail::ByteReader r(bytes.substr(4));
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw LoadError(LoadErrorKind::version, "file version " + std::to_string(version) + ", expected " +
                                                    std::to_string(kCheckpointVersion));
    Checkpoint c;
    const std::string cfg_text = r.get_string("config", kMaxText);
    try {
        c.config = parse_config_text(cfg_text);
    } catch (const ArgumentError& e) {
        throw LoadError(LoadErrorKind::corrupt, std::string("config block: ") + e.what());
    }
    c.kind = r.get_string("kind", kMaxName);
    c.step = r.get<std::uint64_t>("step");
    c.rng_state = r.get_string("rng state", kMaxText);
    const auto count = r.get<std::uint32_t>("tensor count");
    if (count > kMaxTensors) throw LoadError(LoadErrorKind::corrupt, "tensor count out of range");
    std::vector<std::pair<std::string, Shape>> manifest;
    std::size_t payload = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string("tensor name", kMaxName);
        const auto rank = r.get<std::uint32_t>("tensor rank");
        if (rank == 0 || rank > kMaxRank) throw LoadError(LoadErrorKind::corrupt, name + ": rank out of range");
        Shape s(rank);
        for (auto& d : s) {
            d = static_cast<std::size_t>(r.get<std::uint64_t>("tensor dims"));
            if (d == 0 || d > (std::size_t{1} << 32)) throw LoadError(LoadErrorKind::corrupt, name + ": dimension out of range");
        }
        payload += shape_numel(s);
        manifest.emplace_back(std::move(name), std::move(s));
    }
    if (r.remaining() < payload * sizeof(double)) throw LoadError(LoadErrorKind::truncated, "tensor payload is short");
    if (r.remaining() > payload * sizeof(double)) throw LoadError(LoadErrorKind::corrupt, "trailing bytes after payload");
    for (auto& [name, shape] : manifest) {
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = r.get<double>("payload");
        c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const std::string bytes = serialize(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError(LoadErrorKind::io, "cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw LoadError(LoadErrorKind::io, "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError(LoadErrorKind::io, "cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
}

}  // namespace xfuse
