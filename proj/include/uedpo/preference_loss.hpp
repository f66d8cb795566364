#ifndef UEDPO_PREFERENCE_LOSS_HPP
#define UEDPO_PREFERENCE_LOSS_HPP

// DPO and uncertainty-weighted DPO objectives with analytic gradients. The
// per-token intensities enter as constants: no derivative flows through them.

#include "core.hpp"
#include "toy_policy.hpp"
#include "uncertainty.hpp"

namespace uedpo {

struct PreferencePair {
    ImageFeatures image;
    TokenSeq prompt;
    TokenSeq chosen;
    TokenSeq rejected;
    std::uint64_t pair_id = 0;

    void validate(const Vocabulary& vocab) const {
        require(!chosen.empty() && !rejected.empty(), "PreferencePair: responses must be non-empty");
        for (const TokenSeq* seq : {&prompt, &chosen, &rejected})
            for (TokenId t : *seq) require(vocab.valid(t), "PreferencePair: token id out of range");
    }

    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

struct TokenTerm {
    double logp = 0.0;
    double logp_ref = 0.0;
    double lam = 1.0;
};

struct LossBreakdown {
    double chosen_sum = 0.0;
    double rejected_sum = 0.0;
    double margin = 0.0;
    double loss = 0.0;
    std::vector<TokenTerm> chosen_tokens;
    std::vector<TokenTerm> rejected_tokens;
};

/// Teacher-forced per-token log-probabilities of `response`.
inline Vector sequence_log_probs(const PolicyParams& params, const ImageFeatures& image, const TokenSeq& prompt,
                                 const TokenSeq& response) {
    Vector out;
    out.reserve(response.size());
    DecodingState s{image, prompt, {}};
    for (TokenId tok : response) {
        require(params.spec.vocab.valid(tok), "sequence_log_probs: token out of range");
        const Vector z = logits(params, s);
        out.push_back(z[static_cast<std::size_t>(tok)] - log_sum_exp(z));
        s.prefix.push_back(tok);
    }
    return out;
}

/// Reference log-probabilities of both branches; the reference is frozen so these can be cached per pair.
struct ReferenceLogProbs {
    Vector chosen;
    Vector rejected;
};

inline ReferenceLogProbs reference_log_probs(const PolicyParams& ref, const PreferencePair& pair) {
    return {sequence_log_probs(ref, pair.image, pair.prompt, pair.chosen),
            sequence_log_probs(ref, pair.image, pair.prompt, pair.rejected)};
}

namespace detail {

inline double branch_sum(const Vector& logp, const Vector& logp_ref, const SequenceDiagnostics& diag, double beta,
                         std::vector<TokenTerm>& terms, std::ptrdiff_t index_base) {
    require(diag.tokens.size() == logp.size() && logp_ref.size() == logp.size(),
            "uedpo_loss: diagnostics length does not match response length");
    terms.resize(logp.size());
    double s = 0.0;
    for (std::size_t t = 0; t < logp.size(); ++t) {
        const double lam = diag.tokens[t].lam;
        if (!std::isfinite(lam) || !std::isfinite(logp[t]) || !std::isfinite(logp_ref[t]))
            throw NumericFailure("preference loss: non-finite term at token " + std::to_string(t),
                                 index_base + static_cast<std::ptrdiff_t>(t));
        terms[t] = {logp[t], logp_ref[t], lam};
        s += lam * logp[t] - logp_ref[t];
    }
    return beta * s;
}

inline LossBreakdown assemble(const Vector& lw, const Vector& lw_ref, const Vector& ll, const Vector& ll_ref,
                              const SequenceDiagnostics& diag_w, const SequenceDiagnostics& diag_l, double beta) {
    require(beta > 0.0, "preference loss: beta must be positive");
    LossBreakdown b;
    b.chosen_sum = branch_sum(lw, lw_ref, diag_w, beta, b.chosen_tokens, 0);
    b.rejected_sum = branch_sum(ll, ll_ref, diag_l, beta, b.rejected_tokens, static_cast<std::ptrdiff_t>(lw.size()));
    b.margin = b.chosen_sum - b.rejected_sum;
    b.loss = softplus(-b.margin);
    if (!std::isfinite(b.loss)) throw NumericFailure("preference loss: non-finite loss");
    return b;
}

} // namespace detail

inline LossBreakdown uedpo_loss(const PolicyParams& theta, const ReferenceLogProbs& ref, const PreferencePair& pair,
                                double beta, const SequenceDiagnostics& diag_w, const SequenceDiagnostics& diag_l) {
    return detail::assemble(sequence_log_probs(theta, pair.image, pair.prompt, pair.chosen), ref.chosen,
                            sequence_log_probs(theta, pair.image, pair.prompt, pair.rejected), ref.rejected, diag_w,
                            diag_l, beta);
}

inline LossBreakdown uedpo_loss(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair,
                                double beta, const SequenceDiagnostics& diag_w, const SequenceDiagnostics& diag_l) {
    return uedpo_loss(theta, reference_log_probs(ref, pair), pair, beta, diag_w, diag_l);
}

/// Plain DPO: the weighted objective with every intensity fixed at 1.
inline LossBreakdown dpo_loss(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair,
                              double beta) {
    return uedpo_loss(theta, ref, pair, beta, SequenceDiagnostics::neutral(pair.chosen.size()),
                      SequenceDiagnostics::neutral(pair.rejected.size()));
}

inline double implicit_reward_margin(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair,
                                     double beta) {
    return dpo_loss(theta, ref, pair, beta).margin;
}

struct LossGradient {
    Matrix grad;
    LossBreakdown breakdown;
};

namespace detail {

inline void accumulate_branch_grad(const PolicyParams& theta, const PreferencePair& pair, const TokenSeq& response,
                                   const SequenceDiagnostics& diag, double scale, Matrix& out) {
    DecodingState s{pair.image, pair.prompt, {}};
    for (std::size_t t = 0; t < response.size(); ++t) {
        const Vector f = featurize(theta.spec, s);
        const Vector z = logits_from_features(theta.weights, f);
        accumulate_grad_log_prob(f, z, response[t], scale * diag.tokens[t].lam, out);
        s.prefix.push_back(response[t]);
    }
}

} // namespace detail

/// d loss / d theta = -sigmoid(-margin) * beta * (sum lam_w grad log pi_w - sum lam_l grad log pi_l).
inline LossGradient uedpo_grad(const PolicyParams& theta, const ReferenceLogProbs& ref, const PreferencePair& pair,
                               double beta, const SequenceDiagnostics& diag_w, const SequenceDiagnostics& diag_l) {
    LossGradient out{Matrix(theta.weights.rows(), theta.weights.cols()),
                     uedpo_loss(theta, ref, pair, beta, diag_w, diag_l)};
    const double dmargin = -sigmoid(-out.breakdown.margin) * beta;
    detail::accumulate_branch_grad(theta, pair, pair.chosen, diag_w, dmargin, out.grad);
    detail::accumulate_branch_grad(theta, pair, pair.rejected, diag_l, -dmargin, out.grad);
    if (!out.grad.all_finite()) throw NumericFailure("uedpo_grad: non-finite gradient");
    return out;
}

inline LossGradient uedpo_grad(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair,
                               double beta, const SequenceDiagnostics& diag_w, const SequenceDiagnostics& diag_l) {
    return uedpo_grad(theta, reference_log_probs(ref, pair), pair, beta, diag_w, diag_l);
}

inline LossGradient dpo_grad(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair,
                             double beta) {
    return uedpo_grad(theta, ref, pair, beta, SequenceDiagnostics::neutral(pair.chosen.size()),
                      SequenceDiagnostics::neutral(pair.rejected.size()));
}

} // namespace uedpo

#endif // UEDPO_PREFERENCE_LOSS_HPP
