#ifndef UEDPO_HARNESS_TRAIN_HPP
#define UEDPO_HARNESS_TRAIN_HPP

// Training loop. Per batch:
//   1. corrupt each pair's image at step k with noise keyed by (seed, pair_id, step)
//   2. delta and u for every response token under the current theta
//   3. masks and intensities (forced to 1 on branches the method disables)
//   4. loss gradient with the intensities frozen
//   5. Adam update at the cosine-annealed learning rate
// Per-pair work fans out over threads; reductions run in ascending pair_id
// order, so results do not depend on the thread count.

#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <thread>

#include "../optimizer.hpp"
#include "../preference_loss.hpp"
#include "../synth_world.hpp"
#include "../uncertainty.hpp"
#include "../visual_noise.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "report.hpp"

namespace uedpo::harness {

/// Worker count from UEDPO_THREADS, else the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("UEDPO_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct PairSignals {
    ResponseSignals chosen;
    ResponseSignals rejected;
};

struct PairDiagnostics {
    SequenceDiagnostics chosen;
    SequenceDiagnostics rejected;
};

inline PairSignals pair_signals(const PolicyParams& theta, const PreferencePair& pair, const NoiseSchedule& schedule,
                                const RunConfig& cfg, std::uint64_t step) {
    const Vector eps = pair_noise(cfg.seed, pair.pair_id, step, pair.image.values.size());
    const BlurredImage blurred = corrupt(pair.image, schedule, cfg.noise.k, eps);
    return {response_signals(theta, pair.image, blurred.image, pair.prompt, pair.chosen),
            response_signals(theta, pair.image, blurred.image, pair.prompt, pair.rejected)};
}

inline void disable_branch(SequenceDiagnostics& d) {
    for (auto& t : d.tokens) t.lam = 1.0;
}

inline SequenceDiagnostics diagnostics_with_threshold(const ResponseSignals& sig, Branch branch, double threshold,
                                                      double alpha, SelectionStats stats) {
    const auto mask = threshold_mask(sig.deltas, threshold, branch);
    auto d = apply_intensity(sig.us, mask, alpha, stats, branch);
    for (std::size_t t = 0; t < d.tokens.size(); ++t) d.tokens[t].delta = sig.deltas[t];
    return d;
}

/// Masks and intensities for a batch of pairs under the configured quantile scope and method.
inline std::vector<PairDiagnostics> batch_diagnostics(const std::vector<PairSignals>& signals, const RunConfig& cfg) {
    std::vector<PairDiagnostics> out(signals.size());
    if (cfg.quantile_scope == QuantileScope::PerSequence) {
        for (std::size_t i = 0; i < signals.size(); ++i) {
            out[i].chosen = sequence_diagnostics(signals[i].chosen, Branch::Preferred, cfg.tau, cfg.alpha, cfg.mu_quantile);
            out[i].rejected =
                sequence_diagnostics(signals[i].rejected, Branch::Dispreferred, cfg.tau, cfg.alpha, cfg.mu_quantile);
        }
    } else {
        for (Branch branch : {Branch::Preferred, Branch::Dispreferred}) {
            const auto pick = [&](const PairSignals& s) -> const ResponseSignals& {
                return branch == Branch::Preferred ? s.chosen : s.rejected;
            };
            Vector deltas;
            for (const auto& s : signals) deltas.insert(deltas.end(), pick(s).deltas.begin(), pick(s).deltas.end());
            const double threshold = quantile(deltas, branch == Branch::Preferred ? cfg.tau : 1.0 - cfg.tau);
            Vector selected;
            for (const auto& s : signals) {
                const auto mask = threshold_mask(pick(s).deltas, threshold, branch);
                for (std::size_t t = 0; t < mask.size(); ++t)
                    if (mask[t]) selected.push_back(pick(s).us[t]);
            }
            const SelectionStats stats = selection_stats(selected, cfg.mu_quantile);
            for (std::size_t i = 0; i < signals.size(); ++i) {
                auto d = diagnostics_with_threshold(pick(signals[i]), branch, threshold, cfg.alpha, stats);
                (branch == Branch::Preferred ? out[i].chosen : out[i].rejected) = std::move(d);
            }
        }
    }
    for (auto& d : out) {
        if (!preferred_active(cfg.method)) disable_branch(d.chosen);
        if (!dispreferred_active(cfg.method)) disable_branch(d.rejected);
    }
    return out;
}

inline EvalRecord evaluate(const PolicyParams& params, const WorldSpec& world, const RunConfig& cfg) {
    const AttributeAccuracy a = evaluate_attributes(params, world, cfg.eval.scenes, cfg.eval.seed);
    return {a.hallucination_rate, a.common_accuracy, a.underrepresented_accuracy};
}

inline std::size_t steps_per_epoch(std::size_t pairs, std::size_t batch) { return (pairs + batch - 1) / batch; }

struct TrainResult {
    RunReport report;
    PolicyParams theta;
};

struct TrainOptions {
    std::size_t threads = 0; ///< 0 = worker_count()
};

inline void validate_dataset(const std::vector<PreferencePair>& data, const WorldSpec& world) {
    require(!data.empty(), "train: empty dataset");
    for (const auto& p : data) {
        p.validate(world.vocab);
        require(p.image.values.size() == world.image_dim(), "train: pair image dimension does not match the world");
        require(p.chosen != p.rejected, "train: pair " + std::to_string(p.pair_id) + " has identical responses");
    }
}

/// Trains theta from the reference on `data`; theta starts as a copy of `ref`.
inline TrainResult train(const RunConfig& cfg, const std::vector<PreferencePair>& data, const WorldSpec& world,
                         const PolicyParams& ref, const TrainOptions& opt = {}) {
    cfg.validate();
    validate_dataset(data, world);
    const std::size_t threads = opt.threads ? opt.threads : worker_count();
    const NoiseSchedule schedule = build_schedule(cfg.noise.num_steps, cfg.noise.interpretation);

    std::vector<ReferenceLogProbs> ref_cache(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) { ref_cache[i] = reference_log_probs(ref, data[i]); });

    TrainResult result{RunReport{}, ref};
    RunReport& report = result.report;
    report.config = config_to_json(cfg);
    report.reference = evaluate(ref, world, cfg);

    PolicyParams& theta = result.theta;
    AdamState adam(theta.weights.rows(), theta.weights.cols());
    const AdamConfig acfg{cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps};
    const std::size_t per_epoch = steps_per_epoch(data.size(), cfg.batch_size);
    const std::size_t total = per_epoch * cfg.epochs;

    std::vector<std::size_t> order(data.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Stream shuffle(cfg.seed, 0x53485546ULL, epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
            const std::size_t lo = b * cfg.batch_size;
            const std::size_t hi = std::min(lo + cfg.batch_size, data.size());
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::sort(batch.begin(), batch.end(),
                      [&](std::size_t x, std::size_t y) { return data[x].pair_id < data[y].pair_id; });

            std::vector<PairSignals> signals(batch.size());
            parallel_for(batch.size(), threads, [&](std::size_t i) {
                signals[i] = pair_signals(theta, data[batch[i]], schedule, cfg, step);
            });
            const std::vector<PairDiagnostics> diags = batch_diagnostics(signals, cfg);

            std::vector<LossGradient> grads(batch.size());
            parallel_for(batch.size(), threads, [&](std::size_t i) {
                try {
                    grads[i] = uedpo_grad(theta, ref_cache[batch[i]], data[batch[i]], cfg.beta, diags[i].chosen,
                                          diags[i].rejected);
                } catch (const NumericFailure& e) {
                    throw NumericFailure("step " + std::to_string(step) + ", pair " +
                                             std::to_string(data[batch[i]].pair_id) + ": " + e.what(),
                                         e.index());
                }
            });

            Matrix grad(theta.weights.rows(), theta.weights.cols());
            StepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            double lam_w = 0.0, lam_l = 0.0;
            std::size_t n_w = 0, n_l = 0;
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                grad.axpy(inv, grads[i].grad);
                rec.loss += inv * grads[i].breakdown.loss;
                rec.margin += inv * grads[i].breakdown.margin;
                for (const auto& t : diags[i].chosen.tokens) {
                    lam_w += t.lam;
                    rec.selected_w += t.selected ? 1 : 0;
                }
                for (const auto& t : diags[i].rejected.tokens) {
                    lam_l += t.lam;
                    rec.selected_l += t.selected ? 1 : 0;
                }
                n_w += diags[i].chosen.tokens.size();
                n_l += diags[i].rejected.tokens.size();
            }
            rec.mean_lambda_w = lam_w / static_cast<double>(n_w);
            rec.mean_lambda_l = lam_l / static_cast<double>(n_l);
            rec.lr = cosine_lr(cfg.optimizer.lr, step, total);
            adam_step(theta.weights, grad, adam, rec.lr, acfg);
            report.steps.push_back(rec);
        }
        report.epochs.push_back(evaluate(theta, world, cfg));
    }
    report.final_eval = report.epochs.back();
    return result;
}

inline WorldSpec world_from_config(const RunConfig& cfg) { return generate_world(cfg.world_seed, cfg.world); }

inline PolicyParams reference_from_config(const RunConfig& cfg, const WorldSpec& world) {
    return pretrain_reference(world, cfg.reference.bias_strength, cfg.reference.seed, cfg.reference.pretrain);
}

inline std::vector<PreferencePair> dataset_from_config(const RunConfig& cfg, const WorldSpec& world) {
    return generate_dataset(world, cfg.data.pairs, cfg.data.seed);
}

/// Loads a checkpoint and checks it against the world's policy shape.
inline PolicyParams load_policy(const std::string& path, const WorldSpec& world) {
    Matrix w = read_checkpoint(path);
    const PolicySpec spec = world.policy_spec();
    require(w.rows() == spec.vocab.size && w.cols() == spec.feature_dim(),
            "checkpoint '" + path + "' shape does not match the configured world");
    return {spec, std::move(w)};
}

/// CSV of per-token diagnostics for both branches of one pair:
/// branch,position,token_id,delta,u,selected,lambda
inline std::string token_heatmap_csv(const PolicyParams& theta, const PreferencePair& pair, const RunConfig& cfg,
                                     std::uint64_t step = 0) {
    const NoiseSchedule schedule = build_schedule(cfg.noise.num_steps, cfg.noise.interpretation);
    RunConfig per_seq = cfg;
    per_seq.quantile_scope = QuantileScope::PerSequence;
    const PairDiagnostics d = batch_diagnostics({pair_signals(theta, pair, schedule, cfg, step)}, per_seq).front();
    std::string out = "branch,position,token_id,delta,u,selected,lambda\n";
    const auto rows = [&](const char* name, const TokenSeq& seq, const SequenceDiagnostics& diag) {
        for (std::size_t t = 0; t < seq.size(); ++t) {
            const auto& tok = diag.tokens[t];
            out += std::string(name) + ',' + std::to_string(t) + ',' + std::to_string(seq[t]) + ',' +
                   format_double(tok.delta) + ',' + format_double(tok.u) + ',' + (tok.selected ? "1" : "0") + ',' +
                   format_double(tok.lam) + '\n';
        }
    };
    rows("chosen", pair.chosen, d.chosen);
    rows("rejected", pair.rejected, d.rejected);
    return out;
}

inline void dump_token_heatmap(const PolicyParams& theta, const PreferencePair& pair, const RunConfig& cfg,
                               const std::filesystem::path& path, std::uint64_t step = 0) {
    write_text(path, token_heatmap_csv(theta, pair, cfg, step));
}

} // namespace uedpo::harness

#endif // UEDPO_HARNESS_TRAIN_HPP
