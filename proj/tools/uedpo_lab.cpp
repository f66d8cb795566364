// uedpo-lab: dataset generation, training, theory checks, token heatmaps and
// run comparison for the synthetic captioning world.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uedpo/harness/dataset_io.hpp"
#include "uedpo/harness/train.hpp"
#include "uedpo/theory_lab.hpp"

namespace fs = std::filesystem;
using namespace uedpo;
using namespace uedpo::harness;

namespace {

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

int cmd_gen_data(const std::string& config_path, const std::string& out) {
    const RunConfig cfg = config_or_default(config_path);
    cfg.validate();
    const WorldSpec w = world_from_config(cfg);
    write_dataset(dataset_from_config(cfg, w), out);
    std::printf("wrote %zu pairs to %s\n", cfg.data.pairs, out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const fs::path& dir) {
    const RunConfig cfg = config_or_default(config_path);
    cfg.validate();
    const WorldSpec w = world_from_config(cfg);
    const auto data = read_dataset(data_path);
    const PolicyParams ref = reference_from_config(cfg, w);
    const TrainResult r = train(cfg, data, w, ref);
    emit_report(r.report, dir);
    write_checkpoint(r.theta.weights, (dir / "theta.ckpt").string());
    write_checkpoint(ref.weights, (dir / "ref.ckpt").string());
    write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
    write_dataset(data, (dir / "data.jsonl").string());
    const auto& e = r.report.final_eval;
    std::printf("method %s: hallucination %.4f, common accuracy %.4f, underrepresented accuracy %.4f\n",
                to_string(cfg.method).c_str(), e.hallucination_rate, e.common_accuracy, e.underrepresented_accuracy);
    std::printf("run written to %s\n", dir.string().c_str());
    return 0;
}

struct TheoryRow {
    std::string name;
    double value;
    double limit;
};

int cmd_theory(const fs::path& dir) {
    fs::create_directories(dir);
    Stream rng(11, 0x7E0);
    std::string solutions = "problem,actions,beta,eta,v_star,objective,brute_objective,max_policy_gap,identity_residual\n";
    double obj_gap = 0.0, pol_gap = 0.0, residual = 0.0;
    for (std::size_t i = 0; i < 200; ++i) {
        const auto p = theory::random_problem(rng, 2 + rng.below(5), i % 2 ? 0.1 : 1.0);
        const auto s = theory::optimal_policy(p);
        const Vector b = theory::brute_force_optimum(p, {20, 5000, i});
        const double fo = theory::exploration_objective(p, s.pi_star);
        const double fb = theory::exploration_objective(p, b);
        double gap = 0.0;
        for (std::size_t a = 0; a < p.actions(); ++a) gap = std::max(gap, std::abs(b[a] - s.pi_star[a]));
        const double res = theory::advantage_identity_residual(p, s);
        obj_gap = std::max(obj_gap, fb - fo);
        pol_gap = std::max(pol_gap, gap);
        residual = std::max(residual, res);
        solutions += std::to_string(i) + ',' + std::to_string(p.actions()) + ',' + format_double(p.beta) + ',' +
                     format_double(s.eta) + ',' + format_double(s.v_star) + ',' + format_double(fo) + ',' +
                     format_double(fb) + ',' + format_double(gap) + ',' + format_double(res) + '\n';
    }
    write_text(dir / "solutions.csv", solutions);

    std::string signs = "problem,action,below_threshold,predicted,empirical,dead_zone,agree\n";
    std::size_t disagreements = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        const auto p = theory::random_problem(rng, 2 + rng.below(5), i % 2 ? 0.1 : 1.0);
        const std::size_t a = rng.below(p.actions());
        const auto r = theory::derivative_sign_probe(p, a);
        disagreements += !r.agree;
        signs += std::to_string(i) + ',' + std::to_string(a) + ',' +
                 (theory::below_correction_threshold(p, a, theory::solve_eta(p)) ? "1" : "0") + ',' +
                 format_double(r.predicted) + ',' + format_double(r.empirical) + ',' + (r.dead_zone ? "1" : "0") +
                 ',' + (r.agree ? "1" : "0") + '\n';
    }
    write_text(dir / "sign_law.csv", signs);

    const TheoryRow rows[] = {{"objective gap vs brute force", obj_gap, 1e-8},
                              {"policy gap vs brute force", pol_gap, 1e-5},
                              {"advantage identity residual", residual, 1e-9},
                              {"sign-law disagreements", static_cast<double>(disagreements), 0.0}};
    bool ok = true;
    std::printf("%-32s %12s %10s  result\n", "check", "value", "limit");
    for (const auto& r : rows) {
        const bool pass = r.value <= r.limit;
        ok = ok && pass;
        std::printf("%-32s %12.3g %10.3g  %s\n", r.name.c_str(), r.value, r.limit, pass ? "PASS" : "FAIL");
    }
    std::printf("tables written to %s\n", dir.string().c_str());
    return ok ? 0 : 1;
}

int cmd_heatmap(const fs::path& checkpoint, std::uint64_t pair_id, const fs::path& out, std::string config_path,
                std::string data_path, std::uint64_t step) {
    const fs::path run_dir = checkpoint.parent_path();
    if (config_path.empty()) config_path = (run_dir / "config.json").string();
    if (data_path.empty()) data_path = (run_dir / "data.jsonl").string();
    const RunConfig cfg = load_config(config_path);
    const WorldSpec w = world_from_config(cfg);
    const PolicyParams theta = load_policy(checkpoint.string(), w);
    for (const auto& p : read_dataset(data_path)) {
        if (p.pair_id != pair_id) continue;
        dump_token_heatmap(theta, p, cfg, out, step);
        std::printf("heatmap for pair %llu written to %s\n", static_cast<unsigned long long>(pair_id),
                    out.string().c_str());
        return 0;
    }
    throw InvalidInput("pair_id " + std::to_string(pair_id) + " not found in " + data_path);
}

int cmd_compare(const fs::path& a, const fs::path& b) {
    const auto load = [](const fs::path& p) { return load_report(fs::is_directory(p) ? p / "report.json" : p); };
    const RunReport ra = load(a), rb = load(b);
    const auto method = [](const RunReport& r) { return r.config.value("method", std::string("?")); };
    std::printf("A: %s (%s)\nB: %s (%s)\n", a.string().c_str(), method(ra).c_str(), b.string().c_str(),
                method(rb).c_str());
    std::printf("%-28s %10s %10s %10s\n", "metric", "A", "B", "B - A");
    const auto row = [](const char* name, double x, double y) {
        std::printf("%-28s %10.4f %10.4f %+10.4f\n", name, x, y, y - x);
    };
    row("hallucination_rate", ra.final_eval.hallucination_rate, rb.final_eval.hallucination_rate);
    row("common_accuracy", ra.final_eval.common_accuracy, rb.final_eval.common_accuracy);
    row("underrepresented_accuracy", ra.final_eval.underrepresented_accuracy,
        rb.final_eval.underrepresented_accuracy);
    if (!ra.steps.empty() && !rb.steps.empty()) {
        row("final_loss", ra.steps.back().loss, rb.steps.back().loss);
        row("final_margin", ra.steps.back().margin, rb.steps.back().margin);
    }
    if (ra.reference != rb.reference) std::printf("note: the runs start from different reference policies\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uedpo-lab: uncertainty-weighted preference optimization on a synthetic captioning world"};
    app.require_subcommand(1);

    std::string config, data, out, checkpoint, heat_config, heat_data;
    std::uint64_t pair_id = 0, step = 0;

    auto* gen = app.add_subcommand("gen-data", "Generate a preference dataset as JSONL");
    gen->add_option("--config", config, "JSON config (defaults when omitted)")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Output JSONL path")->required();

    auto* tr = app.add_subcommand("train", "Train a policy and write a run directory");
    tr->add_option("--config", config, "JSON config (defaults when omitted)")->check(CLI::ExistingFile);
    tr->add_option("--data", data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", out, "Run directory")->required();

    auto* th = app.add_subcommand("theory", "Check the single-state exploration solution and write tables");
    th->add_option("--out", out, "Output directory")->required();

    auto* hm = app.add_subcommand("heatmap", "Per-token delta/u/lambda CSV for one pair");
    hm->add_option("--checkpoint", checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
    hm->add_option("--pair-id", pair_id, "Pair id in the dataset")->required();
    hm->add_option("--out", out, "Output CSV")->required();
    hm->add_option("--config", heat_config, "Config (default: config.json next to the checkpoint)");
    hm->add_option("--data", heat_data, "Dataset (default: data.jsonl next to the checkpoint)");
    hm->add_option("--step", step, "Noise step key for the corrupted image");

    auto* cmp = app.add_subcommand("compare", "Paired metric deltas between two runs");
    std::vector<std::string> runs;
    cmp->add_option("--run", runs, "Run directory or report.json; pass twice (A then B)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_gen_data(config, out);
        if (*tr) return cmd_train(config, data, out);
        if (*th) return cmd_theory(out);
        if (*hm) return cmd_heatmap(checkpoint, pair_id, out, heat_config, heat_data, step);
        if (*cmp) {
            if (runs.size() != 2) throw InvalidInput("compare: pass --run twice");
            return cmd_compare(runs[0], runs[1]);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
