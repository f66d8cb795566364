#ifndef UEDPO_UNCERTAINTY_HPP
#define UEDPO_UNCERTAINTY_HPP

// Token-level visual sensitivity (delta), epistemic uncertainty (u), quantile
// masks and the exploration-intensity factors applied inside the loss.

#include "core.hpp"
#include "toy_policy.hpp"

namespace uedpo {

enum class Branch { Preferred, Dispreferred };

struct TokenDiagnostics {
    double delta = 0.0;
    double u = 0.0;
    bool selected = false;
    double lam = 1.0;
};

struct SequenceDiagnostics {
    std::vector<TokenDiagnostics> tokens;
    double mu_I = 0.0;
    double sigma_I = 0.0;

    /// All-ones intensities, used for plain DPO and for disabled branches.
    static SequenceDiagnostics neutral(std::size_t n) {
        SequenceDiagnostics d;
        d.tokens.resize(n);
        return d;
    }
};

inline constexpr double kSigmaGuard = 1e-8;

/// Clean-minus-blurred logit of the realized token.
inline double logit_variation(const PolicyParams& params, const DecodingState& state, TokenId token,
                              const DecodingState& blurred_state) {
    require(params.spec.vocab.valid(token), "logit_variation: token out of range");
    const auto t = static_cast<std::size_t>(token);
    return logits(params, state)[t] - logits(params, blurred_state)[t];
}

/// Clean logit of the blurred-image argmax minus the clean logit of the realized token.
inline double epistemic_uncertainty(const PolicyParams& params, const DecodingState& state, TokenId token,
                                    const DecodingState& blurred_state) {
    require(params.spec.vocab.valid(token), "epistemic_uncertainty: token out of range");
    const Vector clean = logits(params, state);
    const std::size_t guess = argmax(logits(params, blurred_state));
    return clean[guess] - clean[static_cast<std::size_t>(token)];
}

/// Linear-interpolation quantile on sorted values, position q*(n-1).
inline double quantile(std::span<const double> values, double q) {
    require(!values.empty(), "quantile: empty list");
    require(q >= 0.0 && q <= 1.0, "quantile: q must lie in [0, 1]");
    Vector sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline std::vector<bool> threshold_mask(std::span<const double> deltas, double threshold, Branch branch) {
    std::vector<bool> mask(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i)
        mask[i] = branch == Branch::Preferred ? deltas[i] <= threshold : deltas[i] >= threshold;
    return mask;
}

/// Flags tokens with delta <= q_tau(deltas).
inline std::vector<bool> insensitive_mask(std::span<const double> deltas, double tau) {
    require(tau > 0.0 && tau < 1.0, "insensitive_mask: tau must lie in (0, 1)");
    return threshold_mask(deltas, quantile(deltas, tau), Branch::Preferred);
}

/// Flags tokens with delta >= q_{1-tau}(deltas).
inline std::vector<bool> sensitive_mask(std::span<const double> deltas, double tau) {
    require(tau > 0.0 && tau < 1.0, "sensitive_mask: tau must lie in (0, 1)");
    return threshold_mask(deltas, quantile(deltas, 1.0 - tau), Branch::Dispreferred);
}

struct SelectionStats {
    double mu = 0.0;
    double sigma = 0.0;
};

/// First-quantile location and population standard deviation of the selected u values.
inline SelectionStats selection_stats(std::span<const double> selected_us, double mu_quantile) {
    require(!selected_us.empty(), "selection_stats: no selected tokens");
    SelectionStats s;
    s.mu = quantile(selected_us, mu_quantile);
    double mean = 0.0;
    for (double u : selected_us) mean += u;
    mean /= static_cast<double>(selected_us.size());
    double var = 0.0;
    for (double u : selected_us) var += (u - mean) * (u - mean);
    s.sigma = std::sqrt(var / static_cast<double>(selected_us.size()));
    return s;
}

/// lambda = 1 +/- alpha * sigmoid((u - mu) / sigma) on selected tokens, exactly 1 elsewhere.
inline SequenceDiagnostics apply_intensity(std::span<const double> us, const std::vector<bool>& mask, double alpha,
                                           SelectionStats stats, Branch branch) {
    require(us.size() == mask.size(), "lambda: u and mask lengths differ");
    require(alpha >= 0.0, "lambda: alpha must be non-negative");
    SequenceDiagnostics d;
    d.mu_I = stats.mu;
    d.sigma_I = stats.sigma;
    d.tokens.resize(us.size());
    const double sign = branch == Branch::Preferred ? 1.0 : -1.0;
    for (std::size_t t = 0; t < us.size(); ++t) {
        auto& tok = d.tokens[t];
        tok.u = us[t];
        tok.selected = mask[t];
        if (!mask[t]) continue;
        const double z = stats.sigma < kSigmaGuard ? 0.0 : (us[t] - stats.mu) / stats.sigma;
        tok.lam = 1.0 + sign * alpha * sigmoid(z);
    }
    return d;
}

inline SequenceDiagnostics branch_lambda(std::span<const double> us, const std::vector<bool>& mask, double alpha,
                                         double mu_quantile, Branch branch) {
    require(us.size() == mask.size(), "lambda: u and mask lengths differ");
    Vector selected;
    for (std::size_t t = 0; t < us.size(); ++t)
        if (mask[t]) selected.push_back(us[t]);
    require(!selected.empty(), "lambda: mask selects no tokens");
    return apply_intensity(us, mask, alpha, selection_stats(selected, mu_quantile), branch);
}

inline SequenceDiagnostics lambda_preferred(std::span<const double> us, const std::vector<bool>& mask, double alpha,
                                            double mu_quantile = 0.25) {
    return branch_lambda(us, mask, alpha, mu_quantile, Branch::Preferred);
}

inline SequenceDiagnostics lambda_dispreferred(std::span<const double> us, const std::vector<bool>& mask, double alpha,
                                               double mu_quantile = 0.25) {
    return branch_lambda(us, mask, alpha, mu_quantile, Branch::Dispreferred);
}

/// Raw per-token signals of one response under teacher forcing.
struct ResponseSignals {
    Vector deltas;
    Vector us;
};

/// Computes delta and u for every response token, teacher-forcing the response's own prefix.
inline ResponseSignals response_signals(const PolicyParams& params, const ImageFeatures& clean, const ImageFeatures& blurred,
                                        const TokenSeq& prompt, const TokenSeq& response) {
    ResponseSignals out;
    out.deltas.reserve(response.size());
    out.us.reserve(response.size());
    DecodingState cs{clean, prompt, {}};
    DecodingState bs{blurred, prompt, {}};
    for (std::size_t t = 0; t < response.size(); ++t) {
        const TokenId tok = response[t];
        require(params.spec.vocab.valid(tok), "response_signals: token out of range");
        const Vector zc = logits(params, cs);
        const Vector zb = logits(params, bs);
        const auto ti = static_cast<std::size_t>(tok);
        out.deltas.push_back(zc[ti] - zb[ti]);
        out.us.push_back(zc[argmax(zb)] - zc[ti]);
        cs.prefix.push_back(tok);
        bs.prefix.push_back(tok);
    }
    return out;
}

/// Full per-sequence pipeline: mask by delta quantile, then intensities from u.
inline SequenceDiagnostics sequence_diagnostics(const ResponseSignals& sig, Branch branch, double tau, double alpha,
                                                double mu_quantile) {
    const auto mask = branch == Branch::Preferred ? insensitive_mask(sig.deltas, tau) : sensitive_mask(sig.deltas, tau);
    auto d = branch_lambda(sig.us, mask, alpha, mu_quantile, branch);
    for (std::size_t t = 0; t < d.tokens.size(); ++t) d.tokens[t].delta = sig.deltas[t];
    return d;
}

} // namespace uedpo

#endif // UEDPO_UNCERTAINTY_HPP
