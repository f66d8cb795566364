#ifndef UEDPO_HARNESS_REPORT_HPP
#define UEDPO_HARNESS_REPORT_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "../core.hpp"

namespace uedpo::harness {

inline constexpr const char* kCodeVersion = "uedpo-lab/1.0.0";
inline constexpr const char* kReportSchema = "uedpo-lab/1.0.0/report";

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double margin = 0.0;
    double mean_lambda_w = 1.0;
    double mean_lambda_l = 1.0;
    std::size_t selected_w = 0;
    std::size_t selected_l = 0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EvalRecord {
    double hallucination_rate = 0.0;
    double common_accuracy = 0.0;
    double underrepresented_accuracy = 0.0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct RunReport {
    std::string schema_version = kReportSchema;
    std::string code_version = kCodeVersion;
    nlohmann::json config;
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> epochs; ///< evaluation of theta after each epoch
    EvalRecord reference;
    EvalRecord final_eval;

    friend bool operator==(const RunReport&, const RunReport&) = default;
};

namespace detail {

inline nlohmann::json eval_to_json(const EvalRecord& e) {
    return {{"hallucination_rate", e.hallucination_rate},
            {"common_accuracy", e.common_accuracy},
            {"underrepresented_accuracy", e.underrepresented_accuracy}};
}

inline EvalRecord eval_from_json(const nlohmann::json& j) {
    return {j.at("hallucination_rate").get<double>(), j.at("common_accuracy").get<double>(),
            j.at("underrepresented_accuracy").get<double>()};
}

} // namespace detail

inline nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.steps)
        steps.push_back({{"step", s.step},
                         {"epoch", s.epoch},
                         {"lr", s.lr},
                         {"loss", s.loss},
                         {"margin", s.margin},
                         {"mean_lambda_w", s.mean_lambda_w},
                         {"mean_lambda_l", s.mean_lambda_l},
                         {"selected_w", s.selected_w},
                         {"selected_l", s.selected_l}});
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) epochs.push_back(detail::eval_to_json(e));
    return {{"schema_version", r.schema_version},
            {"code_version", r.code_version},
            {"config", r.config},
            {"steps", steps},
            {"epochs", epochs},
            {"reference", detail::eval_to_json(r.reference)},
            {"final", detail::eval_to_json(r.final_eval)}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    try {
        r.schema_version = j.at("schema_version").get<std::string>();
        r.code_version = j.at("code_version").get<std::string>();
        r.config = j.at("config");
        for (const auto& s : j.at("steps"))
            r.steps.push_back({s.at("step").get<std::size_t>(), s.at("epoch").get<std::size_t>(), s.at("lr").get<double>(),
                               s.at("loss").get<double>(), s.at("margin").get<double>(),
                               s.at("mean_lambda_w").get<double>(), s.at("mean_lambda_l").get<double>(),
                               s.at("selected_w").get<std::size_t>(), s.at("selected_l").get<std::size_t>()});
        for (const auto& e : j.at("epochs")) r.epochs.push_back(detail::eval_from_json(e));
        r.reference = detail::eval_from_json(j.at("reference"));
        r.final_eval = detail::eval_from_json(j.at("final"));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("report: malformed: ") + e.what());
    }
    return r;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string steps_csv(const RunReport& r) {
    std::string out = "step,epoch,lr,loss,margin,mean_lambda_w,mean_lambda_l,selected_w,selected_l\n";
    for (const auto& s : r.steps) {
        out += std::to_string(s.step) + ',' + std::to_string(s.epoch) + ',' + format_double(s.lr) + ',' +
               format_double(s.loss) + ',' + format_double(s.margin) + ',' + format_double(s.mean_lambda_w) + ',' +
               format_double(s.mean_lambda_l) + ',' + std::to_string(s.selected_w) + ',' + std::to_string(s.selected_l) +
               '\n';
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("I/O error writing '" + path.string() + "'");
}

/// Writes report.json and steps.csv into `dir` (created if missing).
inline void emit_report(const RunReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");
    write_text(dir / "steps.csv", steps_csv(r));
}

inline RunReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open report '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("report '" + path.string() + "': " + e.what());
    }
    return report_from_json(j);
}

} // namespace uedpo::harness

#endif // UEDPO_HARNESS_REPORT_HPP
