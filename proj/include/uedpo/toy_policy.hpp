#ifndef UEDPO_TOY_POLICY_HPP
#define UEDPO_TOY_POLICY_HPP

// A linear-softmax conditional token policy. Logits are a linear map of a
// fixed feature embedding of (image, prompt, recent prefix), which keeps the
// log-probability gradient analytic.

#include <set>
#include <string>
#include <utility>

#include "core.hpp"

namespace uedpo {

struct Vocabulary {
    std::size_t size = 0;
    std::set<TokenId> vision_tokens;
    std::set<TokenId> prior_tokens;
    TokenId bos = 0;
    TokenId eos = 1;

    bool valid(TokenId t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < size; }

    void validate() const {
        require(size > 0, "Vocabulary: size must be positive");
        require(bos != eos, "Vocabulary: BOS and EOS must differ");
        require(valid(bos) && valid(eos), "Vocabulary: special id out of range");
        for (TokenId t : vision_tokens) {
            require(valid(t), "Vocabulary: vision token out of range");
            require(!prior_tokens.contains(t), "Vocabulary: token is both vision and prior");
        }
        for (TokenId t : prior_tokens) require(valid(t), "Vocabulary: prior token out of range");
    }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

struct ImageFeatures {
    Vector values;
    friend bool operator==(const ImageFeatures&, const ImageFeatures&) = default;
};

struct DecodingState {
    ImageFeatures image;
    TokenSeq prompt;
    TokenSeq prefix;
};

/// Shape of the feature map: [image | mean one-hot prompt | mean one-hot of the last `window` prefix tokens].
struct PolicySpec {
    Vocabulary vocab;
    std::size_t image_dim = 0;
    std::size_t window = 4;

    std::size_t feature_dim() const noexcept { return image_dim + 2 * vocab.size; }
    std::size_t prompt_offset() const noexcept { return image_dim; }
    std::size_t prefix_offset() const noexcept { return image_dim + vocab.size; }

    friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

struct PolicyParams {
    PolicySpec spec;
    Matrix weights; // vocab.size x feature_dim

    PolicyParams() = default;
    PolicyParams(PolicySpec s, Matrix w) : spec(std::move(s)), weights(std::move(w)) { validate(); }

    static PolicyParams zeros(const PolicySpec& s) { return {s, Matrix(s.vocab.size, s.feature_dim())}; }

    void validate() const {
        require(weights.rows() == spec.vocab.size, "PolicyParams: weight rows must equal vocabulary size");
        require(weights.cols() == spec.feature_dim(), "PolicyParams: weight cols must equal feature dimension");
        require(weights.all_finite(), "PolicyParams: non-finite weight");
    }
};

inline Vector featurize(const PolicySpec& spec, const DecodingState& state) {
    require(state.image.values.size() == spec.image_dim, "featurize: image dimension mismatch");
    Vector f(spec.feature_dim(), 0.0);
    std::copy(state.image.values.begin(), state.image.values.end(), f.begin());

    const auto add_mean = [&](std::span<const TokenId> toks, std::size_t offset) {
        if (toks.empty()) return;
        const double w = 1.0 / static_cast<double>(toks.size());
        for (TokenId t : toks) {
            require(spec.vocab.valid(t), "featurize: token id " + std::to_string(t) + " out of range");
            f[offset + static_cast<std::size_t>(t)] += w;
        }
    };
    add_mean(state.prompt, spec.prompt_offset());
    const std::size_t m = std::min(spec.window, state.prefix.size());
    add_mean(std::span<const TokenId>(state.prefix).last(m), spec.prefix_offset());
    return f;
}

inline Vector logits_from_features(const Matrix& weights, std::span<const double> features) {
    require(weights.cols() == features.size(), "logits: dimension mismatch");
    Vector out(weights.rows(), 0.0);
    for (std::size_t r = 0; r < weights.rows(); ++r) {
        const auto row = weights.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * features[c];
        out[r] = acc;
    }
    return out;
}

inline Vector logits(const PolicyParams& params, const DecodingState& state) {
    require(params.weights.rows() == params.spec.vocab.size && params.weights.cols() == params.spec.feature_dim(),
            "logits: weight shape does not match policy spec");
    return logits_from_features(params.weights, featurize(params.spec, state));
}

/// Max-subtracted log-softmax.
inline Vector log_softmax(std::span<const double> z) {
    const double lse = log_sum_exp(z);
    Vector out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

inline double log_prob(const PolicyParams& params, const DecodingState& state, TokenId token) {
    require(params.spec.vocab.valid(token), "log_prob: token out of range");
    const Vector z = logits(params, state);
    return z[static_cast<std::size_t>(token)] - log_sum_exp(z);
}

/// out += scale * d log pi(token | features) / d weights, given precomputed features and logits.
inline void accumulate_grad_log_prob(std::span<const double> features, std::span<const double> logit_values, TokenId token,
                                     double scale, Matrix& out) {
    const double lse = log_sum_exp(logit_values);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double p = std::exp(logit_values[r] - lse);
        const double coef = scale * ((static_cast<TokenId>(r) == token ? 1.0 : 0.0) - p);
        if (coef == 0.0) continue;
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += coef * features[c];
    }
}

/// Analytic gradient (one_hot(token) - softmax) outer featurize(state).
inline Matrix grad_log_prob(const PolicyParams& params, const DecodingState& state, TokenId token) {
    require(params.spec.vocab.valid(token), "grad_log_prob: token out of range");
    const Vector f = featurize(params.spec, state);
    const Vector z = logits_from_features(params.weights, f);
    Matrix g(params.weights.rows(), params.weights.cols());
    accumulate_grad_log_prob(f, z, token, 1.0, g);
    return g;
}

/// Greedy decoding; the lowest id wins argmax ties. Stops after EOS or max_len tokens.
inline TokenSeq greedy_decode(const PolicyParams& params, const ImageFeatures& image, const TokenSeq& prompt,
                              std::size_t max_len) {
    require(max_len >= 1, "greedy_decode: max_len must be at least 1");
    DecodingState state{image, prompt, {}};
    while (state.prefix.size() < max_len) {
        const Vector z = logits(params, state);
        const auto next = static_cast<TokenId>(argmax(z));
        state.prefix.push_back(next);
        if (next == params.spec.vocab.eos) break;
    }
    return std::move(state.prefix);
}

} // namespace uedpo

#endif // UEDPO_TOY_POLICY_HPP
