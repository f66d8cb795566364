#ifndef UEDPO_HARNESS_DATASET_IO_HPP
#define UEDPO_HARNESS_DATASET_IO_HPP

// Preference datasets as JSONL, one pair per line:
//   {"pair_id":0,"image":[...],"prompt":[...],"chosen":[...],"rejected":[...]}
// Doubles are written in shortest round-trip form, so a file re-read and
// re-written is byte-identical.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "../preference_loss.hpp"

namespace uedpo::harness {

inline nlohmann::json pair_to_json(const PreferencePair& p) {
    return nlohmann::json{{"pair_id", p.pair_id},
                          {"image", p.image.values},
                          {"prompt", p.prompt},
                          {"chosen", p.chosen},
                          {"rejected", p.rejected}};
}

inline PreferencePair pair_from_json(const nlohmann::json& j) {
    PreferencePair p;
    try {
        for (const auto& [key, _] : j.items())
            if (key != "pair_id" && key != "image" && key != "prompt" && key != "chosen" && key != "rejected")
                throw InvalidInput("dataset: unknown field '" + key + "'");
        p.pair_id = j.at("pair_id").get<std::uint64_t>();
        p.image.values = j.at("image").get<Vector>();
        p.prompt = j.at("prompt").get<TokenSeq>();
        p.chosen = j.at("chosen").get<TokenSeq>();
        p.rejected = j.at("rejected").get<TokenSeq>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("dataset: malformed pair: ") + e.what());
    }
    return p;
}

inline void write_dataset(const std::vector<PreferencePair>& pairs, std::ostream& out) {
    for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
}

inline void write_dataset(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset '" + path + "'");
    write_dataset(pairs, out);
    if (!out) throw std::runtime_error("I/O error writing dataset '" + path + "'");
}

inline std::vector<PreferencePair> read_dataset(std::istream& in) {
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(pair_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<PreferencePair> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
    return read_dataset(in);
}

} // namespace uedpo::harness

#endif // UEDPO_HARNESS_DATASET_IO_HPP
