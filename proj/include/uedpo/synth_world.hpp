#ifndef UEDPO_SYNTH_WORLD_HPP
#define UEDPO_SYNTH_WORLD_HPP

// A synthetic captioning world. A scene is a tuple of attribute values, one per
// slot; the image is the concatenation of per-slot one-hot blocks plus small
// Gaussian noise. The correct caption gives each slot P connective tokens
// followed by the slot's attribute token (shown for P = 2):
//
//   prompt:   BOS DESCRIBE
//   response: c_00 c_01 a_0 c_10 c_11 a_1 ... a_{S-1} EOS
//
// Some (slot, value) pairs are marked underrepresented and are downsampled when
// the reference policy is pretrained, which plants a visual blind spot.

#include <numeric>
#include <utility>

#include "core.hpp"
#include "optimizer.hpp"
#include "preference_loss.hpp"
#include "rng.hpp"
#include "toy_policy.hpp"

namespace uedpo {

struct WorldConfig {
    std::size_t vocab_size = 50;
    std::size_t attribute_slots = 4;
    std::size_t tokens_per_slot = 5;
    std::size_t window = 4;
    std::size_t connectives_per_slot = 2;
    double underrepresented_prob = 1.0; ///< chance that a slot gets one underrepresented value
    double image_scale = 1.0; ///< amplitude of the one-hot attribute features
    double image_noise = 0.1;
    std::size_t swaps = 1; ///< attribute tokens corrupted in each rejected response

    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

struct SlotToken {
    std::size_t slot;
    std::size_t value;
    friend auto operator<=>(const SlotToken&, const SlotToken&) = default;
};

struct WorldSpec {
    WorldConfig config;
    Vocabulary vocab;
    TokenId describe = 2;
    std::vector<std::vector<TokenId>> connectives; ///< [slot][j], emitted before the slot's attribute
    std::vector<std::vector<TokenId>> slot_tokens; ///< [slot][value] -> vision token id
    std::set<SlotToken> underrepresented;

    std::size_t slots() const noexcept { return config.attribute_slots; }
    std::size_t values() const noexcept { return config.tokens_per_slot; }
    std::size_t image_dim() const noexcept { return slots() * values(); }
    std::size_t response_length() const noexcept { return slots() * (config.connectives_per_slot + 1) + 1; }
    std::size_t attribute_position(std::size_t slot) const noexcept {
        return slot * (config.connectives_per_slot + 1) + config.connectives_per_slot;
    }

    TokenSeq prompt() const { return {vocab.bos, describe}; }

    PolicySpec policy_spec() const { return {vocab, image_dim(), config.window}; }

    bool is_underrepresented(std::size_t slot, std::size_t value) const {
        return underrepresented.contains({slot, value});
    }

    friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

struct RenderedScene {
    ImageFeatures image;
    std::vector<std::size_t> values; ///< attribute value per slot
    TokenSeq truth;                  ///< attribute token per slot
};

inline WorldSpec generate_world(std::uint64_t seed, const WorldConfig& cfg = {}) {
    require(cfg.attribute_slots > 0 && cfg.tokens_per_slot > 1, "generate_world: slots and tokens per slot must be positive");
    require(cfg.window > 0, "generate_world: window must be positive");
    require(cfg.image_scale > 0.0 && cfg.image_noise >= 0.0, "generate_world: image scale/noise out of range");
    require(cfg.swaps <= cfg.attribute_slots, "generate_world: swaps exceed slot count");
    require(cfg.underrepresented_prob >= 0.0 && cfg.underrepresented_prob <= 1.0,
            "generate_world: underrepresented_prob must lie in [0, 1]");
    require(cfg.connectives_per_slot >= 1, "generate_world: connectives_per_slot must be >= 1");
    const std::size_t needed =
        3 + cfg.attribute_slots * cfg.connectives_per_slot + cfg.attribute_slots * cfg.tokens_per_slot;
    require(cfg.vocab_size >= needed,
            "generate_world: vocabulary of " + std::to_string(cfg.vocab_size) + " too small, need " + std::to_string(needed));

    WorldSpec w;
    w.config = cfg;
    w.vocab.size = cfg.vocab_size;
    w.vocab.bos = 0;
    w.vocab.eos = 1;
    w.describe = 2;

    // Seeded shuffle of the non-special ids decides which become vision tokens.
    std::vector<TokenId> ids(cfg.vocab_size - 3);
    std::iota(ids.begin(), ids.end(), TokenId{3});
    Stream rng(seed, 0x3031ULL);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);

    std::size_t next = 0;
    w.slot_tokens.assign(cfg.attribute_slots, {});
    for (auto& block : w.slot_tokens)
        for (std::size_t v = 0; v < cfg.tokens_per_slot; ++v) {
            block.push_back(ids[next]);
            w.vocab.vision_tokens.insert(ids[next++]);
        }
    w.connectives.assign(cfg.attribute_slots, {});
    for (auto& block : w.connectives)
        for (std::size_t j = 0; j < cfg.connectives_per_slot; ++j) block.push_back(ids[next++]);
    w.vocab.prior_tokens.insert(w.describe);
    for (std::size_t i = cfg.attribute_slots * cfg.tokens_per_slot; i < ids.size(); ++i) w.vocab.prior_tokens.insert(ids[i]);

    Stream under(seed, 0x554EULL);
    for (std::size_t s = 0; s < cfg.attribute_slots; ++s) {
        const bool pick = under.uniform() < cfg.underrepresented_prob;
        const std::size_t v = under.below(cfg.tokens_per_slot);
        if (pick) w.underrepresented.insert({s, v});
    }
    w.vocab.validate();
    return w;
}

/// Scene with the given attribute values; image noise drawn from `rng`.
inline RenderedScene render_scene(const WorldSpec& w, std::vector<std::size_t> values, Stream& rng) {
    require(values.size() == w.slots(), "render_scene: one value per slot required");
    RenderedScene sc;
    sc.image.values.assign(w.image_dim(), 0.0);
    for (std::size_t s = 0; s < w.slots(); ++s) {
        require(values[s] < w.values(), "render_scene: attribute value out of range");
        sc.image.values[s * w.values() + values[s]] = w.config.image_scale;
        sc.truth.push_back(w.slot_tokens[s][values[s]]);
    }
    for (double& x : sc.image.values) x += w.config.image_noise * rng.normal();
    sc.values = std::move(values);
    return sc;
}

inline RenderedScene sample_scene(const WorldSpec& w, Stream& rng) {
    std::vector<std::size_t> values(w.slots());
    for (auto& v : values) v = rng.below(w.values());
    return render_scene(w, std::move(values), rng);
}

inline TokenSeq caption(const WorldSpec& w, const TokenSeq& attributes) {
    TokenSeq out;
    out.reserve(w.response_length());
    for (std::size_t s = 0; s < w.slots(); ++s) {
        out.insert(out.end(), w.connectives[s].begin(), w.connectives[s].end());
        out.push_back(attributes[s]);
    }
    out.push_back(w.vocab.eos);
    return out;
}

/// Source of preference pairs; pair i depends only on (seed, i).
class PairStream {
public:
    PairStream(std::uint64_t seed, std::uint64_t first_id = 0) : seed_(seed), next_id_(first_id) {}

    std::uint64_t next_id() noexcept { return next_id_++; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t next_id_;
};

inline PreferencePair render_pair(const WorldSpec& w, PairStream& stream) {
    const std::uint64_t id = stream.next_id();
    Stream rng(stream.seed(), 0x50414952ULL, id);
    const RenderedScene sc = sample_scene(w, rng);

    // Choose `swaps` distinct slots and replace each with a wrong value from the same slot.
    std::vector<std::size_t> slots(w.slots());
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    for (std::size_t i = 0; i < w.config.swaps; ++i) std::swap(slots[i], slots[i + rng.below(slots.size() - i)]);
    TokenSeq wrong = sc.truth;
    for (std::size_t i = 0; i < w.config.swaps; ++i) {
        const std::size_t s = slots[i];
        const std::size_t offset = 1 + rng.below(w.values() - 1);
        wrong[s] = w.slot_tokens[s][(sc.values[s] + offset) % w.values()];
    }
    return {sc.image, w.prompt(), caption(w, sc.truth), caption(w, wrong), id};
}

inline std::vector<PreferencePair> generate_dataset(const WorldSpec& w, std::size_t count, std::uint64_t seed) {
    PairStream stream(seed);
    std::vector<PreferencePair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(render_pair(w, stream));
    return out;
}

struct AttributeAccuracy {
    double hallucination_rate = 0.0; ///< mismatching attribute positions over all attribute positions
    double common_accuracy = 0.0;    ///< accuracy where the truth is not underrepresented
    double underrepresented_accuracy = 0.0;
    std::size_t positions = 0;
    std::size_t underrepresented_positions = 0;
};

/// Greedy-decodes n_scenes seeded scenes and scores each attribute position
/// against the scene truth. Positions the decode never reached count as
/// mismatches, as do non-vision tokens.
inline AttributeAccuracy evaluate_attributes(const PolicyParams& params, const WorldSpec& w, std::size_t n_scenes,
                                             std::uint64_t seed) {
    require(n_scenes >= 1, "evaluate_attributes: n_scenes must be >= 1");
    std::size_t wrong = 0, common = 0, common_ok = 0, under = 0, under_ok = 0;
    const TokenSeq prompt = w.prompt();
    for (std::size_t i = 0; i < n_scenes; ++i) {
        Stream rng(seed, 0x4556414CULL, i);
        const RenderedScene sc = sample_scene(w, rng);
        const TokenSeq out = greedy_decode(params, sc.image, prompt, w.response_length());
        for (std::size_t s = 0; s < w.slots(); ++s) {
            const std::size_t pos = w.attribute_position(s);
            const bool ok = pos < out.size() && out[pos] == sc.truth[s];
            wrong += ok ? 0 : 1;
            if (w.is_underrepresented(s, sc.values[s])) {
                ++under;
                under_ok += ok ? 1 : 0;
            } else {
                ++common;
                common_ok += ok ? 1 : 0;
            }
        }
    }
    AttributeAccuracy acc;
    acc.positions = n_scenes * w.slots();
    acc.underrepresented_positions = under;
    acc.hallucination_rate = static_cast<double>(wrong) / static_cast<double>(acc.positions);
    acc.common_accuracy = common ? static_cast<double>(common_ok) / static_cast<double>(common) : 0.0;
    acc.underrepresented_accuracy = under ? static_cast<double>(under_ok) / static_cast<double>(under) : 0.0;
    return acc;
}

inline double hallucination_rate(const PolicyParams& params, const WorldSpec& w, std::size_t n_scenes,
                                 std::uint64_t seed) {
    return evaluate_attributes(params, w, n_scenes, seed).hallucination_rate;
}

/// Hand-built policy that reads each attribute straight off the image and
/// emits the caption template; decodes every noise-free scene correctly.
///
/// Every template token t pushes its successor by 16g from the prefix window
/// (4g after averaging) and every emitted token suppresses itself by the same
/// amount, so only the successor of the most recent token stays boosted. Slot
/// attributes share the boost from the last connective and are told apart by
/// the image.
inline PolicyParams lookup_policy(const WorldSpec& w, double gain = 10.0) {
    const PolicySpec spec = w.policy_spec();
    require(spec.window >= 1, "lookup_policy: window must be positive");
    PolicyParams p = PolicyParams::zeros(spec);
    auto& W = p.weights;
    const double g = gain;
    const double push = 4.0 * g * static_cast<double>(spec.window);
    const auto col_prefix = [&](TokenId t) { return spec.prefix_offset() + static_cast<std::size_t>(t); };
    const auto row = [](TokenId t) { return static_cast<std::size_t>(t); };
    const auto link = [&](TokenId from, TokenId to) { W(row(to), col_prefix(from)) = push; };

    for (std::size_t s = 0; s < w.slots(); ++s) {
        const auto& conn = w.connectives[s];
        for (TokenId c : conn) W(row(c), col_prefix(c)) = -push;
        for (std::size_t j = 0; j + 1 < conn.size(); ++j) link(conn[j], conn[j + 1]);
        const TokenId follower = s + 1 < w.slots() ? w.connectives[s + 1].front() : w.vocab.eos;
        for (std::size_t v = 0; v < w.values(); ++v) {
            const TokenId a = w.slot_tokens[s][v];
            W(row(a), s * w.values() + v) = g / w.config.image_scale;
            link(conn.back(), a);
            for (TokenId b : w.slot_tokens[s]) W(row(a), col_prefix(b)) = -push;
            link(a, follower);
        }
    }
    W(row(w.connectives[0].front()), spec.prompt_offset() + static_cast<std::size_t>(w.describe)) = 4.0 * g;
    return p;
}

struct PretrainOptions {
    std::size_t steps = 600;      ///< initial optimization steps
    std::size_t max_steps = 2400; ///< upper bound while chasing the calibration targets
    std::size_t check_every = 300;
    std::size_t batch_size = 32;
    double lr = 0.05;
    double image_l2 = 0.02; ///< coefficient of 0.5*l2*||W_image||^2 on the image columns only
    std::size_t eval_scenes = 2000;
    bool enforce_calibration = true;
    double min_common_accuracy = 0.9;
    double max_underrepresented_accuracy = 0.5;
};

/// Teacher-forced cross-entropy gradient of the caption for one scene: returns the summed NLL.
inline double caption_nll_grad(const PolicyParams& params, const ImageFeatures& image, const TokenSeq& prompt,
                               const TokenSeq& response, double scale, Matrix& grad) {
    DecodingState s{image, prompt, {}};
    double nll = 0.0;
    for (TokenId tok : response) {
        const Vector f = featurize(params.spec, s);
        const Vector z = logits_from_features(params.weights, f);
        nll -= z[static_cast<std::size_t>(tok)] - log_sum_exp(z);
        accumulate_grad_log_prob(f, z, tok, -scale, grad);
        s.prefix.push_back(tok);
    }
    return nll;
}

/// Draws a pretraining scene; scenes containing any underrepresented pair are kept with probability 1 - bias.
inline RenderedScene sample_biased_scene(const WorldSpec& w, double bias_strength, Stream& rng) {
    for (;;) {
        RenderedScene sc = sample_scene(w, rng);
        bool rare = false;
        for (std::size_t s = 0; s < w.slots(); ++s) rare = rare || w.is_underrepresented(s, sc.values[s]);
        if (!rare || rng.uniform() >= bias_strength) return sc;
    }
}

/// Cross-entropy pretraining on correct captions from a biased scene
/// distribution. With enforce_calibration, training continues in chunks until
/// the common/underrepresented accuracy targets hold or max_steps is reached.
inline PolicyParams pretrain_reference(const WorldSpec& w, double bias_strength, std::uint64_t seed,
                                       const PretrainOptions& opt = {}) {
    require(bias_strength >= 0.0 && bias_strength <= 1.0, "pretrain_reference: bias_strength must lie in [0, 1]");
    PolicyParams params = PolicyParams::zeros(w.policy_spec());
    AdamState adam(params.weights.rows(), params.weights.cols());
    AdamConfig acfg;
    const TokenSeq prompt = w.prompt();
    Stream rng(seed, 0x50524554ULL);

    std::size_t step = 0;
    const auto run = [&](std::size_t until) {
        Matrix grad(params.weights.rows(), params.weights.cols());
        for (; step < until; ++step) {
            grad *= 0.0;
            for (std::size_t b = 0; b < opt.batch_size; ++b) {
                const RenderedScene sc = sample_biased_scene(w, bias_strength, rng);
                caption_nll_grad(params, sc.image, prompt, caption(w, sc.truth), 1.0 / static_cast<double>(opt.batch_size),
                                 grad);
            }
            for (std::size_t r = 0; r < grad.rows(); ++r)
                for (std::size_t c = 0; c < w.image_dim(); ++c) grad(r, c) += opt.image_l2 * params.weights(r, c);
            adam_step(params.weights, grad, adam, opt.lr, acfg);
        }
    };

    run(opt.steps);
    if (!opt.enforce_calibration) return params;
    for (;;) {
        const AttributeAccuracy acc = evaluate_attributes(params, w, opt.eval_scenes, seed ^ 0xCA11ULL);
        if (acc.common_accuracy >= opt.min_common_accuracy &&
            acc.underrepresented_accuracy <= opt.max_underrepresented_accuracy)
            return params;
        if (step >= opt.max_steps)
            throw CalibrationFailure("pretrain_reference: targets unmet after " + std::to_string(step) +
                                     " steps (common accuracy " + std::to_string(acc.common_accuracy) +
                                     ", underrepresented accuracy " + std::to_string(acc.underrepresented_accuracy) + ")");
        run(std::min(step + opt.check_every, opt.max_steps));
    }
}

} // namespace uedpo

#endif // UEDPO_SYNTH_WORLD_HPP
