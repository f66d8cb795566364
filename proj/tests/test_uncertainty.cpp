#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "uedpo/uncertainty.hpp"

using namespace uedpo;

namespace {

Vector one_to_ten() {
    Vector v(10);
    std::iota(v.begin(), v.end(), 1.0);
    return v;
}

std::size_t count(const std::vector<bool>& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

} // namespace

TEST(Quantile, Examples) {
    EXPECT_DOUBLE_EQ(quantile(Vector{0, 1, 2, 3, 4}, 0.5), 2.0);
    EXPECT_NEAR(quantile(one_to_ten(), 0.4), 4.6, 1e-12);
    EXPECT_NEAR(quantile(one_to_ten(), 0.6), 6.4, 1e-12);
    const Vector xs{3.0, -1.0, 7.5, 2.0};
    EXPECT_DOUBLE_EQ(quantile(xs, 0.0), -1.0);
    EXPECT_DOUBLE_EQ(quantile(xs, 1.0), 7.5);
    EXPECT_DOUBLE_EQ(quantile(Vector{0.0, 10.0}, 0.25), 2.5);
    EXPECT_THROW(quantile(Vector{}, 0.5), InvalidInput);
    EXPECT_THROW(quantile(xs, 1.5), InvalidInput);
}

TEST(Masks, Examples) {
    const auto ins = insensitive_mask(one_to_ten(), 0.4);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ins[i], i < 4) << i;
    const auto sen = sensitive_mask(one_to_ten(), 0.4);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sen[i], i >= 6) << i;
    const Vector equal(5, 0.3);
    EXPECT_EQ(count(insensitive_mask(equal, 0.4)), 5u);
    EXPECT_EQ(count(sensitive_mask(equal, 0.4)), 5u);
    EXPECT_EQ(count(insensitive_mask(Vector{2.0}, 0.4)), 1u);
    EXPECT_EQ(count(sensitive_mask(Vector{2.0}, 0.4)), 1u);
}

TEST(Masks, CardinalityByEnumeration) {
    Stream rng(5);
    for (std::size_t n = 1; n <= 20; ++n)
        for (double tau : {0.1, 0.25, 0.4, 0.5, 0.7, 0.9}) {
            Vector d(n);
            for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<double>(i) + 0.01 * rng.uniform();
            for (std::size_t i = n; i > 1; --i) std::swap(d[i - 1], d[rng.below(i)]);
            const double lo_pos = tau * static_cast<double>(n - 1);
            const double hi_pos = (1.0 - tau) * static_cast<double>(n - 1);
            EXPECT_EQ(count(insensitive_mask(d, tau)), static_cast<std::size_t>(std::floor(lo_pos)) + 1) << n << " " << tau;
            EXPECT_EQ(count(sensitive_mask(d, tau)), n - static_cast<std::size_t>(std::ceil(hi_pos))) << n << " " << tau;
        }
}

TEST(Lambda, GuardAndWorkedExamples) {
    const Vector us{0.7, 10.0, 0.0};
    EXPECT_NEAR(lambda_preferred(us, {true, false, false}, 0.3).tokens[0].lam, 1.15, 1e-15);
    EXPECT_NEAR(lambda_dispreferred(us, {true, false, false}, 0.3).tokens[0].lam, 0.85, 1e-15);

    const auto d = lambda_preferred(us, {false, true, true}, 0.3);
    EXPECT_DOUBLE_EQ(d.mu_I, 2.5);
    EXPECT_DOUBLE_EQ(d.sigma_I, 5.0);
    EXPECT_NEAR(d.tokens[1].lam, 1 + 0.3 / (1 + std::exp(-1.5)), 1e-15);
    EXPECT_NEAR(d.tokens[1].lam, 1.245272342858093, 1e-15);
    EXPECT_NEAR(d.tokens[2].lam, 1.1132622006394437, 1e-15);
    EXPECT_EQ(d.tokens[0].lam, 1.0);
    EXPECT_FALSE(d.tokens[0].selected);
}

TEST(Lambda, AlphaZeroGivesOnes) {
    const Vector us{0.1, 2.0, -1.0, 3.0};
    const std::vector<bool> mask{true, true, false, true};
    for (const auto& t : lambda_preferred(us, mask, 0.0).tokens) EXPECT_EQ(t.lam, 1.0);
    for (const auto& t : lambda_dispreferred(us, mask, 0.0).tokens) EXPECT_EQ(t.lam, 1.0);
}

TEST(Lambda, AllFalseMaskRejected) {
    EXPECT_THROW(lambda_preferred(Vector{1.0, 2.0}, {false, false}, 0.3), InvalidInput);
    EXPECT_THROW(lambda_preferred(Vector{1.0, 2.0}, {true}, 0.3), InvalidInput);
}

TEST(Lambda, MonotoneInU) {
    Stream rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        Vector us(6);
        for (double& u : us) u = rng.normal();
        std::vector<bool> mask(6, true);
        const auto w = lambda_preferred(us, mask, 0.3);
        const auto l = lambda_dispreferred(us, mask, 0.3);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                if (us[i] < us[j]) {
                    EXPECT_LE(w.tokens[i].lam, w.tokens[j].lam);
                    EXPECT_GE(l.tokens[i].lam, l.tokens[j].lam);
                }
    }
}

TEST(Signals, DeltaAndUDefinitions) {
    Stream rng(4);
    const PolicySpec spec{testutil::small_vocab(9), 3, 4};
    const PolicyParams p = testutil::random_params(spec, rng, 1.0);
    const DecodingState clean{{{1.0, 0.0, -0.5}}, {0, 2}, {3, 4}};
    DecodingState blur = clean;
    blur.image.values = {0.2, 0.9, 0.1};
    for (TokenId tok = 0; tok < 9; ++tok) {
        const Vector zc = logits(p, clean), zb = logits(p, blur);
        EXPECT_DOUBLE_EQ(logit_variation(p, clean, tok, blur), zc[tok] - zb[tok]);
        EXPECT_DOUBLE_EQ(epistemic_uncertainty(p, clean, tok, blur), zc[argmax(zb)] - zc[tok]);
        EXPECT_EQ(logit_variation(p, clean, tok, clean), 0.0);
    }
    const auto guess = static_cast<TokenId>(argmax(logits(p, blur)));
    EXPECT_EQ(epistemic_uncertainty(p, clean, guess, blur), 0.0);
}

TEST(Signals, ImageBlindWeightsGiveZeroDelta) {
    Stream rng(6);
    const PolicySpec spec{testutil::small_vocab(9), 3, 4};
    PolicyParams p = testutil::random_params(spec, rng, 1.0);
    for (std::size_t r = 0; r < p.weights.rows(); ++r)
        for (std::size_t c = 0; c < 3; ++c) p.weights(r, c) = 0.0;
    const DecodingState clean{{{1.0, 0.0, -0.5}}, {0}, {}};
    DecodingState blur = clean;
    blur.image.values = {-3.0, 2.0, 8.0};
    for (TokenId tok = 0; tok < 9; ++tok) EXPECT_EQ(logit_variation(p, clean, tok, blur), 0.0);
}

TEST(Signals, UInvariantToLogitShift) {
    // Adding the same vector to every logit row leaves u unchanged.
    Stream rng(10);
    const PolicySpec spec{testutil::small_vocab(7), 2, 4};
    PolicyParams p = testutil::random_params(spec, rng, 1.0);
    PolicyParams shifted = p;
    for (std::size_t r = 0; r < p.weights.rows(); ++r) shifted.weights(r, spec.prompt_offset()) += 4.0;
    const DecodingState clean{{{1.0, -1.0}}, {0}, {2}};
    DecodingState blur = clean;
    blur.image.values = {0.1, 0.4};
    for (TokenId tok = 0; tok < 7; ++tok)
        EXPECT_NEAR(epistemic_uncertainty(p, clean, tok, blur), epistemic_uncertainty(shifted, clean, tok, blur), 1e-12);
}

TEST(Signals, UWorkedExample) {
    // Clean logits 2.0 for the token and 3.5 for the blurred argmax.
    const PolicySpec spec{testutil::small_vocab(3), 1, 4};
    PolicyParams p = PolicyParams::zeros(spec);
    p.weights(1, spec.prompt_offset()) = 2.0;
    p.weights(2, spec.prompt_offset()) = 3.5;
    p.weights(2, 0) = 1.0; // image sensitive, still top under blur
    const DecodingState clean{{{0.0}}, {0}, {}};
    const DecodingState blur{{{0.5}}, {0}, {}};
    EXPECT_DOUBLE_EQ(epistemic_uncertainty(p, clean, 1, blur), 1.5);
}

TEST(Diagnostics, SequencePipelineConsistent) {
    Stream rng(12);
    const PolicySpec spec{testutil::small_vocab(10), 4, 4};
    const PolicyParams p = testutil::random_params(spec, rng, 1.0);
    const ImageFeatures clean{{1.0, 0.0, 0.5, -0.3}};
    const ImageFeatures blur{{0.3, 0.2, 0.1, 0.0}};
    const TokenSeq prompt{0, 2};
    const TokenSeq resp{3, 5, 7, 1, 4, 4};
    const ResponseSignals sig = response_signals(p, clean, blur, prompt, resp);
    DecodingState cs{clean, prompt, {}}, bs{blur, prompt, {}};
    for (std::size_t t = 0; t < resp.size(); ++t) {
        EXPECT_DOUBLE_EQ(sig.deltas[t], logit_variation(p, cs, resp[t], bs));
        EXPECT_DOUBLE_EQ(sig.us[t], epistemic_uncertainty(p, cs, resp[t], bs));
        cs.prefix.push_back(resp[t]);
        bs.prefix.push_back(resp[t]);
    }
    const auto dw = sequence_diagnostics(sig, Branch::Preferred, 0.4, 0.3, 0.25);
    const auto mask = insensitive_mask(sig.deltas, 0.4);
    for (std::size_t t = 0; t < resp.size(); ++t) {
        EXPECT_EQ(dw.tokens[t].selected, mask[t]);
        EXPECT_EQ(dw.tokens[t].delta, sig.deltas[t]);
    }
}

TEST(Diagnostics, RandomizedBoundsProperty) {
    Stream rng(13);
    for (int rep = 0; rep < 10000; ++rep) {
        const std::size_t n = 1 + rng.below(15);
        const double alpha = rng.uniform(0.0, 0.9);
        const double tau = rng.uniform(0.05, 0.95);
        ResponseSignals sig;
        for (std::size_t i = 0; i < n; ++i) {
            sig.deltas.push_back(rng.normal());
            sig.us.push_back(rng.uniform() < 0.2 ? 0.0 : 2.0 * rng.normal());
        }
        const auto w = sequence_diagnostics(sig, Branch::Preferred, tau, alpha, 0.25);
        const auto l = sequence_diagnostics(sig, Branch::Dispreferred, tau, alpha, 0.25);
        for (std::size_t i = 0; i < n; ++i) {
            if (w.tokens[i].selected) {
                ASSERT_GE(w.tokens[i].lam, 1.0);
                ASSERT_LE(w.tokens[i].lam, 1.0 + alpha);
            } else {
                ASSERT_EQ(w.tokens[i].lam, 1.0);
            }
            if (l.tokens[i].selected) {
                ASSERT_GE(l.tokens[i].lam, 1.0 - alpha);
                ASSERT_LE(l.tokens[i].lam, 1.0);
            } else {
                ASSERT_EQ(l.tokens[i].lam, 1.0);
            }
        }
        ASSERT_GE(w.sigma_I, 0.0);
    }
}
