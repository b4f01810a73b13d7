#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/random.hpp"
#include "font_record.hpp"

namespace fontclip {

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

/// Val and test sizes are floor(n * fraction); the remainder goes to train.
/// Ids are sorted before the seeded shuffle, so input order does not matter.
inline DatasetSplit make_split(std::vector<std::string> font_ids, SplitFractions fractions, std::uint64_t seed) {
    if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0)
        throw std::invalid_argument("split fractions must be non-negative");
    if (font_ids.size() < 3) throw std::invalid_argument("need at least 3 fonts to split");
    std::sort(font_ids.begin(), font_ids.end());
    if (std::adjacent_find(font_ids.begin(), font_ids.end()) != font_ids.end())
        throw std::invalid_argument("duplicate font id in split input");
    Rng rng(seed);
    shuffle(font_ids, rng);
    const auto n = static_cast<double>(font_ids.size());
    // The epsilon absorbs representation error in fractions such as 1711/17154.
    const auto n_val = static_cast<std::size_t>(std::floor(n * fractions.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * fractions.test + 1e-9));
    DatasetSplit s;
    const auto b = font_ids.begin();
    const auto n_train = font_ids.size() - n_val - n_test;
    s.train.assign(b, b + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(b + static_cast<std::ptrdiff_t>(n_train), b + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(b + static_cast<std::ptrdiff_t>(n_train + n_val), font_ids.end());
    return s;
}

inline DatasetSplit make_split(const std::vector<FontRecord>& records, SplitFractions fractions, std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.font_id);
    return make_split(std::move(ids), fractions, seed);
}

inline nlohmann::json split_to_json(const DatasetSplit& s) {
    return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
    DatasetSplit s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

inline void save_split(const std::filesystem::path& path, const DatasetSplit& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << split_to_json(s).dump(1) << '\n';
}

inline DatasetSplit load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return split_from_json(nlohmann::json::parse(in));
}

}  // namespace fontclip
