#ifndef UEDPO_HARNESS_CONFIG_HPP
#define UEDPO_HARNESS_CONFIG_HPP

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "../synth_world.hpp"
#include "../visual_noise.hpp"

namespace uedpo::harness {

using json = nlohmann::json;

enum class Method { Dpo, UeDpo, UeDpoPrefOnly, UeDpoDisprefOnly };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::Dpo: return "dpo";
    case Method::UeDpo: return "uedpo";
    case Method::UeDpoPrefOnly: return "uedpo_pref_only";
    case Method::UeDpoDisprefOnly: return "uedpo_dispref_only";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::Dpo, Method::UeDpo, Method::UeDpoPrefOnly, Method::UeDpoDisprefOnly})
        if (to_string(m) == s) return m;
    throw InvalidInput("unknown method '" + s + "'");
}

inline bool preferred_active(Method m) { return m == Method::UeDpo || m == Method::UeDpoPrefOnly; }
inline bool dispreferred_active(Method m) { return m == Method::UeDpo || m == Method::UeDpoDisprefOnly; }

enum class QuantileScope { PerSequence, PerBatch };

inline std::string to_string(QuantileScope s) { return s == QuantileScope::PerSequence ? "per_sequence" : "per_batch"; }

inline QuantileScope quantile_scope_from_string(const std::string& s) {
    if (s == "per_sequence") return QuantileScope::PerSequence;
    if (s == "per_batch") return QuantileScope::PerBatch;
    throw InvalidInput("unknown quantile_scope '" + s + "'");
}

struct NoiseConfig {
    std::size_t num_steps = 1000;
    std::size_t k = 500;
    ScheduleInterpretation interpretation = ScheduleInterpretation::OneMinus;
};

struct OptimizerConfig {
    double lr = 1e-3; ///< peak of the cosine schedule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ReferenceConfig {
    std::uint64_t seed = 1;
    double bias_strength = 0.95;
    PretrainOptions pretrain;
};

struct DataConfig {
    std::uint64_t seed = 1;
    std::size_t pairs = 1024;
};

struct EvalConfig {
    std::uint64_t seed = 1;
    std::size_t scenes = 2000;
};

struct RunConfig {
    std::uint64_t seed = 1;
    Method method = Method::UeDpo;
    double beta = 0.1;
    double alpha = 0.3;
    double tau = 0.4;
    double mu_quantile = 0.25;
    QuantileScope quantile_scope = QuantileScope::PerSequence;
    NoiseConfig noise;
    OptimizerConfig optimizer;
    std::size_t epochs = 2;
    std::size_t batch_size = 4;
    std::uint64_t world_seed = 1;
    WorldConfig world;
    ReferenceConfig reference;
    DataConfig data;
    EvalConfig eval;

    void validate() const {
        require(beta > 0.0, "config: beta must be positive");
        require(alpha >= 0.0 && alpha < 1.0, "config: alpha must lie in [0, 1)");
        require(tau > 0.0 && tau < 1.0, "config: tau must lie in (0, 1)");
        require(mu_quantile >= 0.0 && mu_quantile <= 1.0, "config: mu_quantile must lie in [0, 1]");
        require(noise.num_steps >= 1 && noise.k < noise.num_steps, "config: noise.k must be below noise.num_steps");
        require(optimizer.lr > 0.0, "config: optimizer.lr must be positive");
        require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0,
                "config: adam moments must lie in [0, 1)");
        require(optimizer.eps > 0.0, "config: optimizer.eps must be positive");
        require(epochs >= 1, "config: epochs must be >= 1");
        require(batch_size >= 1, "config: batch_size must be >= 1");
        require(reference.bias_strength >= 0.0 && reference.bias_strength <= 1.0,
                "config: reference.bias_strength must lie in [0, 1]");
        require(data.pairs >= 1, "config: data.pairs must be >= 1");
        require(eval.scenes >= 1, "config: eval.scenes must be >= 1");
    }
};

namespace detail {

/// Rejects keys outside `allowed`; typos in config files are errors.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), "config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw InvalidInput("config: unknown key '" + where + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

} // namespace detail

inline RunConfig config_from_json(const json& j) {
    using detail::check_keys;
    using detail::read;
    RunConfig c;
    check_keys(j,
               {"seed", "method", "beta", "alpha", "tau", "mu_quantile", "quantile_scope", "noise", "optimizer", "epochs",
                "batch_size", "world", "reference", "data", "eval"},
               "");
    read(j, "seed", c.seed);
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    read(j, "beta", c.beta);
    read(j, "alpha", c.alpha);
    read(j, "tau", c.tau);
    read(j, "mu_quantile", c.mu_quantile);
    if (j.contains("quantile_scope")) c.quantile_scope = quantile_scope_from_string(j.at("quantile_scope").get<std::string>());
    read(j, "epochs", c.epochs);
    read(j, "batch_size", c.batch_size);

    if (j.contains("noise")) {
        const json& n = j.at("noise");
        check_keys(n, {"num_steps", "k", "interpretation"}, "noise.");
        read(n, "num_steps", c.noise.num_steps);
        read(n, "k", c.noise.k);
        if (n.contains("interpretation"))
            c.noise.interpretation = schedule_interpretation_from_string(n.at("interpretation").get<std::string>());
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, {"kind", "schedule", "lr", "beta1", "beta2", "eps"}, "optimizer.");
        if (o.contains("kind")) require(o.at("kind") == "adam", "config: optimizer.kind must be 'adam'");
        if (o.contains("schedule")) require(o.at("schedule") == "cosine", "config: optimizer.schedule must be 'cosine'");
        read(o, "lr", c.optimizer.lr);
        read(o, "beta1", c.optimizer.beta1);
        read(o, "beta2", c.optimizer.beta2);
        read(o, "eps", c.optimizer.eps);
    }
    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w,
                   {"seed", "vocab_size", "attribute_slots", "tokens_per_slot", "window", "connectives_per_slot",
                    "underrepresented_prob", "image_scale", "image_noise", "swaps"},
                   "world.");
        read(w, "seed", c.world_seed);
        read(w, "vocab_size", c.world.vocab_size);
        read(w, "attribute_slots", c.world.attribute_slots);
        read(w, "tokens_per_slot", c.world.tokens_per_slot);
        read(w, "window", c.world.window);
        read(w, "connectives_per_slot", c.world.connectives_per_slot);
        read(w, "underrepresented_prob", c.world.underrepresented_prob);
        read(w, "image_scale", c.world.image_scale);
        read(w, "image_noise", c.world.image_noise);
        read(w, "swaps", c.world.swaps);
    }
    if (j.contains("reference")) {
        const json& r = j.at("reference");
        check_keys(r,
                   {"seed", "bias_strength", "steps", "max_steps", "check_every", "batch_size", "lr", "image_l2",
                    "eval_scenes", "enforce_calibration"},
                   "reference.");
        auto& p = c.reference.pretrain;
        read(r, "seed", c.reference.seed);
        read(r, "bias_strength", c.reference.bias_strength);
        read(r, "steps", p.steps);
        read(r, "max_steps", p.max_steps);
        read(r, "check_every", p.check_every);
        read(r, "batch_size", p.batch_size);
        read(r, "lr", p.lr);
        read(r, "image_l2", p.image_l2);
        read(r, "eval_scenes", p.eval_scenes);
        read(r, "enforce_calibration", p.enforce_calibration);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"seed", "pairs"}, "data.");
        read(d, "seed", c.data.seed);
        read(d, "pairs", c.data.pairs);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"seed", "scenes"}, "eval.");
        read(e, "seed", c.eval.seed);
        read(e, "scenes", c.eval.scenes);
    }
    c.validate();
    return c;
}

inline json config_to_json(const RunConfig& c) {
    const auto& p = c.reference.pretrain;
    return json{
        {"seed", c.seed},
        {"method", to_string(c.method)},
        {"beta", c.beta},
        {"alpha", c.alpha},
        {"tau", c.tau},
        {"mu_quantile", c.mu_quantile},
        {"quantile_scope", to_string(c.quantile_scope)},
        {"noise",
         {{"num_steps", c.noise.num_steps}, {"k", c.noise.k}, {"interpretation", std::string(to_string(c.noise.interpretation))}}},
        {"optimizer",
         {{"kind", "adam"},
          {"schedule", "cosine"},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps}}},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"world",
         {{"seed", c.world_seed},
          {"vocab_size", c.world.vocab_size},
          {"attribute_slots", c.world.attribute_slots},
          {"tokens_per_slot", c.world.tokens_per_slot},
          {"window", c.world.window},
          {"connectives_per_slot", c.world.connectives_per_slot},
          {"underrepresented_prob", c.world.underrepresented_prob},
          {"image_scale", c.world.image_scale},
          {"image_noise", c.world.image_noise},
          {"swaps", c.world.swaps}}},
        {"reference",
         {{"seed", c.reference.seed},
          {"bias_strength", c.reference.bias_strength},
          {"steps", p.steps},
          {"max_steps", p.max_steps},
          {"check_every", p.check_every},
          {"batch_size", p.batch_size},
          {"lr", p.lr},
          {"image_l2", p.image_l2},
          {"eval_scenes", p.eval_scenes},
          {"enforce_calibration", p.enforce_calibration}}},
        {"data", {{"seed", c.data.seed}, {"pairs", c.data.pairs}}},
        {"eval", {{"seed", c.eval.seed}, {"scenes", c.eval.scenes}}},
    };
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidInput("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

} // namespace uedpo::harness

#endif // UEDPO_HARNESS_CONFIG_HPP
