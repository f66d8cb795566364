#ifndef UEDPO_TESTS_HELPERS_HPP
#define UEDPO_TESTS_HELPERS_HPP

#include <cmath>

#include "uedpo/preference_loss.hpp"
#include "uedpo/rng.hpp"
#include "uedpo/toy_policy.hpp"

namespace testutil {

inline uedpo::Vocabulary small_vocab(std::size_t n = 12) {
    uedpo::Vocabulary v;
    v.size = n;
    return v;
}

inline uedpo::PolicyParams random_params(const uedpo::PolicySpec& spec, uedpo::Stream& rng, double scale = 0.5) {
    auto p = uedpo::PolicyParams::zeros(spec);
    for (double& w : p.weights.data()) w = scale * rng.normal();
    return p;
}

inline uedpo::TokenSeq random_tokens(uedpo::Stream& rng, std::size_t len, std::size_t vocab) {
    uedpo::TokenSeq out(len);
    for (auto& t : out) t = static_cast<uedpo::TokenId>(rng.below(vocab));
    return out;
}

inline uedpo::PreferencePair random_pair(uedpo::Stream& rng, const uedpo::PolicySpec& spec, std::uint64_t id) {
    uedpo::PreferencePair p;
    p.pair_id = id;
    p.image.values.resize(spec.image_dim);
    for (double& x : p.image.values) x = rng.normal();
    p.prompt = random_tokens(rng, 2, spec.vocab.size);
    p.chosen = random_tokens(rng, 2 + rng.below(5), spec.vocab.size);
    p.rejected = random_tokens(rng, 2 + rng.below(5), spec.vocab.size);
    return p;
}

/// Diagnostics with random intensities in [lo, hi] on a random subset of tokens.
inline uedpo::SequenceDiagnostics random_diag(uedpo::Stream& rng, std::size_t n, double lo, double hi) {
    auto d = uedpo::SequenceDiagnostics::neutral(n);
    for (auto& t : d.tokens)
        if (rng.uniform() < 0.6) {
            t.selected = true;
            t.lam = rng.uniform(lo, hi);
        }
    return d;
}

inline double max_abs_diff(const uedpo::Matrix& a, const uedpo::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace testutil

#endif
