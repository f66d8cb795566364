#ifndef UEDPO_OPTIMIZER_HPP
#define UEDPO_OPTIMIZER_HPP

#include <numbers>

#include "core.hpp"

namespace uedpo {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Matrix m;
    Matrix v;
    std::uint64_t t = 0;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(Matrix& params, const Matrix& grad, AdamState& state, double lr, const AdamConfig& cfg = {}) {
    require(params.same_shape(grad) && params.same_shape(state.m) && params.same_shape(state.v),
            "adam_step: shape mismatch");
    if (!grad.all_finite()) throw NumericFailure("adam_step: non-finite gradient");
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    auto& p = params.data();
    auto& m = state.m.data();
    auto& v = state.v.data();
    const auto& g = grad.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
}

/// Cosine annealing from `peak` at step 0 towards 0 at step `total`.
inline double cosine_lr(double peak, std::size_t step, std::size_t total) {
    if (total == 0) return peak;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

} // namespace uedpo

#endif // UEDPO_OPTIMIZER_HPP
