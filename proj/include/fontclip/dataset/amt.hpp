#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/log.hpp"
#include "font_record.hpp"

namespace fontclip {

/// One tag, the font crowd-workers agreed matches it best, and two others.
struct AmtGroup {
    std::string tag;
    std::string strong_font;
    std::array<std::string, 2> weak_fonts;

    friend bool operator==(const AmtGroup&, const AmtGroup&) = default;
};

struct AmtLoadResult {
    std::vector<AmtGroup> groups;
    std::vector<std::string> warnings;
};

inline std::string amt_line(const AmtGroup& g) {
    return nlohmann::json{{"tag", g.tag}, {"strong", g.strong_font}, {"weak", g.weak_fonts}}.dump();
}

inline void save_amt_groups(const std::filesystem::path& path, const std::vector<AmtGroup>& groups) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& g : groups) out << amt_line(g) << '\n';
}

/// Reads AMT JSON lines, rejecting (with a warning) rows that are malformed,
/// name non-distinct fonts, reference unknown fonts, or whose strong font
/// lacks the tag. Pass an empty `fonts` to skip membership checks.
inline AmtLoadResult load_amt_groups(const std::filesystem::path& path, const std::vector<FontMeta>& fonts) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::map<std::string, std::set<std::string>> tags_by_font;
    for (const auto& f : fonts) tags_by_font[f.font_id] = {f.tags.begin(), f.tags.end()};

    AmtLoadResult out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        const auto reject = [&](const std::string& why) {
            out.warnings.push_back(path.filename().string() + ":" + std::to_string(lineno) + ": " + why);
            log::warn(out.warnings.back());
        };
        AmtGroup g;
        try {
            const auto j = nlohmann::json::parse(line);
            g.tag = j.at("tag").get<std::string>();
            g.strong_font = j.at("strong").get<std::string>();
            const auto weak = j.at("weak").get<std::vector<std::string>>();
            if (weak.size() != 2) {
                reject("expected exactly two weak fonts");
                continue;
            }
            g.weak_fonts = {weak[0], weak[1]};
        } catch (const nlohmann::json::exception& e) {
            reject(std::string("malformed row: ") + e.what());
            continue;
        }
        if (g.strong_font == g.weak_fonts[0] || g.strong_font == g.weak_fonts[1] || g.weak_fonts[0] == g.weak_fonts[1]) {
            reject("font ids are not distinct");
            continue;
        }
        if (!fonts.empty()) {
            auto it = tags_by_font.find(g.strong_font);
            if (it == tags_by_font.end()) {
                reject("unknown strong font '" + g.strong_font + "'");
                continue;
            }
            if (!it->second.contains(g.tag)) {
                reject("strong font '" + g.strong_font + "' does not carry tag '" + g.tag + "'");
                continue;
            }
            if (!tags_by_font.contains(g.weak_fonts[0]) || !tags_by_font.contains(g.weak_fonts[1])) {
                reject("unknown weak font");
                continue;
            }
        }
        out.groups.push_back(std::move(g));
    }
    return out;
}

}  // namespace fontclip
