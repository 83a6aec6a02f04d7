#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace triq {

// Shared Adam hyperparameters (used for MLP weights and feature vectors; only
// the learning rate differs between the two parameter groups).
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update over n parameters with bias correction at global step t
// (t >= 1 is the number of completed steps including this one).
inline void adam_update(double* p, const double* g, double* m, double* v, std::size_t n,
                        const AdamConfig& cfg, std::uint64_t t) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

}  // namespace triq
