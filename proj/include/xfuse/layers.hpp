#pragma once

#include <cmath>
#include <random>
#include <string>

#include "xfuse/autograd.hpp"

namespace xfuse {

using Rng = std::mt19937_64;

enum class Modality { ir, vi };

inline std::string to_string(Modality m) { return m == Modality::ir ? "ir" : "vi"; }

inline Tensor random_normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

/// Square conv layer `name.weight` [out,in,k,k] and `name.bias` [out], He-initialized.
inline void init_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                      Rng& rng) {
    const double stddev = std::sqrt(2.0 / double(in * k * k));
    store.add(name + ".weight", random_normal({out, in, k, k}, stddev, rng));
    store.add(name + ".bias", Tensor({out}));
}

/// Same-size convolution with reflect padding (1x1 kernels need none).
inline Var conv_layer(Graph& g, ParamStore& store, const std::string& name, const Var& x) {
    return conv2d_same(x, g.param(store, name + ".weight"), g.param(store, name + ".bias"), Padding::reflect);
}

/// Dense layer `name.weight` [in,out] and `name.bias` [out], Xavier-initialized.
inline void init_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double stddev = std::sqrt(2.0 / double(in + out));
    store.add(name + ".weight", random_normal({in, out}, stddev, rng));
    store.add(name + ".bias", Tensor({out}));
}

inline Var linear_layer(Graph& g, ParamStore& store, const std::string& name, const Var& x) {
    return linear(x, g.param(store, name + ".weight"), g.param(store, name + ".bias"));
}

inline void init_layer_norm(ParamStore& store, const std::string& name, std::size_t d) {
    store.add(name + ".gamma", Tensor({d}, 1.0));
    store.add(name + ".beta", Tensor({d}));
}

inline Var layer_norm_layer(Graph& g, ParamStore& store, const std::string& name, const Var& x) {
    return layer_norm(x, g.param(store, name + ".gamma"), g.param(store, name + ".beta"));
}

}  // namespace xfuse
