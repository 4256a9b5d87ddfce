#pragma once

#include <cmath>

#include "xfuse/autograd.hpp"
#include "xfuse/config.hpp"

namespace xfuse {

/// Momentum SGD over every trainable entry: v <- m v + g; p <- p - lr v.
inline void sgd_step(ParamStore& params, double lr, double momentum = 0.9) {
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        if (p.grad.shape() != p.value.shape()) throw InternalError("sgd_step: missing gradient for " + name);
        if (p.velocity.shape() != p.value.shape()) p.velocity = Tensor::zeros_like(p.value);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.velocity[i] = momentum * p.velocity[i] + p.grad[i];
            p.value[i] -= lr * p.velocity[i];
        }
    }
}

/// L2 norm over all trainable gradients, in store order.
inline double grad_norm(const ParamStore& params) {
    double s = 0.0;
    for (const auto& [_, p] : params)
        if (p.trainable)
            for (double g : p.grad.data()) s += g * g;
    return std::sqrt(s);
}

/// Rescales trainable gradients so their global norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, p] : params)
            if (p.trainable) p.grad *= s;
    }
    return norm;
}

/// lr0 scaled by lr_decay once per completed `decay_every` epochs.
inline double learning_rate(const FuseConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr0;
    for (std::size_t k = epoch / cfg.decay_every; k > 0; --k) lr *= cfg.lr_decay;
    return lr;
}

}  // namespace xfuse
