#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/random.hpp"
#include "amt.hpp"
#include "corpus.hpp"
#include "glyph_renderer.hpp"

namespace fontclip {

struct SyntheticNoiseConfig {
    double drop = 0.0;  ///< per-tag probability of removal (missing tags)
    double swap = 0.0;  ///< per-tag probability of replacement by an unrelated tag (noisy tags)
};

/// Per-font shifts of the tag thresholds, in attribute units, standing in
/// for annotator disagreement near a boundary. They never affect rendering.
struct AnnotatorBias {
    double stroke = 0.0;
    double serif = 0.0;
    double slant = 0.0;
    double roundness = 0.0;
    double aspect = 0.0;
};

struct SyntheticFont {
    std::string font_id;
    FontAttributes attributes;
    AnnotatorBias bias;
    std::vector<std::string> clean_tags;
    std::vector<std::string> tags;
};

/// Every tag the generator can emit.
inline const std::vector<std::string>& synthetic_tag_set() {
    static const std::vector<std::string> tags = {"light",   "bold",    "serif",   "sans-serif", "elegant",
                                                  "italic",  "dynamic", "rounded", "cute",       "sharp",
                                                  "modern",  "condensed", "wide"};
    return tags;
}

/// Attribute-derived tags, in a fixed order. Each attribute has at most one
/// threshold per direction: a second, more extreme rung ("heavy" above
/// "bold") would hand the strongest fonts an extra tag that pulls their
/// impression away from the rung below.
inline std::vector<std::string> tags_from_attributes(const FontAttributes& a, const AnnotatorBias& b = {}) {
    std::vector<std::string> t;
    const bool serif = a.serif_size >= 0.075 + b.serif;
    if (a.stroke <= 0.06 + b.stroke) t.push_back("light");
    if (a.stroke >= 0.115 + b.stroke) t.push_back("bold");
    if (serif) t.push_back("serif");
    if (!a.serif()) t.push_back("sans-serif");
    if (serif && a.stroke <= 0.075 + b.stroke) t.push_back("elegant");
    const bool italic = a.slant >= 0.15 + b.slant;
    if (italic) t.push_back("italic");
    if (italic && a.stroke >= 0.095 + b.stroke) t.push_back("dynamic");
    const bool rounded = a.roundness >= 0.7 + b.roundness;
    const bool sharp = a.roundness <= 0.25 + b.roundness;
    if (rounded) t.push_back("rounded");
    if (rounded && a.stroke >= 0.09 + b.stroke) t.push_back("cute");
    if (sharp) t.push_back("sharp");
    if (!a.serif() && sharp) t.push_back("modern");
    if (a.aspect <= 0.78 + b.aspect) t.push_back("condensed");
    if (a.aspect >= 1.14 + b.aspect) t.push_back("wide");
    return t;
}

/// How strongly a font expresses a tag, for picking the winner of an AMT
/// triplet. Composite tags are graded by the attribute of the tag they imply
/// (cute fonts by roundness), so every font of a group shares that tag.
/// nullopt for tags without a graded attribute.
inline std::optional<double> tag_strength(const std::string& tag, const FontAttributes& a) {
    if (tag == "light") return -a.stroke / 0.12;
    if (tag == "bold") return a.stroke / 0.12;
    if (tag == "serif" || tag == "elegant") return a.serif_size / 0.1;
    if (tag == "italic" || tag == "dynamic") return a.slant / 0.2;
    if (tag == "rounded" || tag == "cute") return a.roundness;
    if (tag == "sharp" || tag == "modern") return -a.roundness;
    if (tag == "condensed") return -a.aspect / 0.7;
    if (tag == "wide") return a.aspect / 0.7;
    return std::nullopt;
}

inline std::string synthetic_font_id(std::size_t i) {
    std::ostringstream os;
    os << "syn" << std::setw(5) << std::setfill('0') << i;
    return os.str();
}

/// Attributes come from one RNG stream and noise from another, so corpora
/// that differ only in noise share fonts and glyphs.
inline std::vector<SyntheticFont> synthesize_fonts(std::size_t n_fonts, std::uint64_t seed,
                                                   const SyntheticNoiseConfig& noise) {
    if (n_fonts < 1) throw std::invalid_argument("n_fonts must be >= 1");
    Rng attr_rng(mix_seed(seed, 1));
    Rng noise_rng(mix_seed(seed, 2));
    Rng bias_rng(mix_seed(seed, 4));
    const auto& all_tags = synthetic_tag_set();
    std::vector<SyntheticFont> fonts;
    fonts.reserve(n_fonts);
    for (std::size_t i = 0; i < n_fonts; ++i) {
        SyntheticFont f;
        f.font_id = synthetic_font_id(i);
        auto& a = f.attributes;
        a.stroke = uniform(attr_rng, 0.03, 0.15);
        a.serif_size = bernoulli(attr_rng, 0.5) ? uniform(attr_rng, 0.06, 0.16) : 0.0;
        a.slant = bernoulli(attr_rng, 0.3) ? uniform(attr_rng, 0.15, 0.35) : uniform(attr_rng, -0.03, 0.08);
        a.roundness = uniform01(attr_rng);
        a.aspect = uniform(attr_rng, 0.6, 1.3);
        f.bias = {uniform(bias_rng, -0.02, 0.02), uniform(bias_rng, -0.015, 0.015), uniform(bias_rng, -0.04, 0.04),
                  uniform(bias_rng, -0.1, 0.1), uniform(bias_rng, -0.08, 0.08)};
        f.clean_tags = tags_from_attributes(a, f.bias);

        // Both draws happen for every tag so the drop and swap streams stay
        // aligned across noise settings.
        std::set<std::string> present(f.clean_tags.begin(), f.clean_tags.end());
        for (const auto& t : f.clean_tags) {
            const bool dropped = uniform01(noise_rng) < noise.drop;
            const bool swapped = uniform01(noise_rng) < noise.swap;
            const auto pick = below(noise_rng, all_tags.size());
            if (dropped) continue;
            if (swapped) {
                std::vector<std::string> candidates;
                for (const auto& c : all_tags)
                    if (!present.contains(c)) candidates.push_back(c);
                if (!candidates.empty()) {
                    const auto& replacement = candidates[pick % candidates.size()];
                    present.insert(replacement);
                    f.tags.push_back(replacement);
                    continue;
                }
            }
            f.tags.push_back(t);
        }
        fonts.push_back(std::move(f));
    }
    return fonts;
}

struct SyntheticCorpusOptions {
    std::size_t n_fonts = 500;
    std::uint64_t seed = 0;
    SyntheticNoiseConfig noise;
    std::size_t amt_groups = 0;  ///< 0 = no amt.jsonl
};

/// Samples same-tag triplets; a triplet is kept only when its strongest font
/// beats the runner-up by `margin` (the analogue of a unanimous vote).
inline std::vector<AmtGroup> make_synthetic_amt_groups(const std::vector<SyntheticFont>& fonts,
                                                       std::size_t n_groups, std::uint64_t seed,
                                                       double margin = 0.5) {
    std::map<std::string, std::vector<const SyntheticFont*>> by_tag;
    for (const auto& f : fonts)
        for (const auto& t : f.tags)
            if (tag_strength(t, f.attributes)) by_tag[t].push_back(&f);
    std::vector<std::string> eligible;
    for (const auto& [tag, members] : by_tag)
        if (members.size() >= 3) eligible.push_back(tag);
    std::vector<AmtGroup> groups;
    if (eligible.empty()) return groups;
    Rng rng(mix_seed(seed, 3));
    std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
    for (std::size_t attempt = 0; groups.size() < n_groups && attempt < 200 * n_groups; ++attempt) {
        const auto& tag = eligible[below(rng, eligible.size())];
        const auto& members = by_tag[tag];
        std::array<std::size_t, 3> idx{};
        idx[0] = below(rng, members.size());
        do idx[1] = below(rng, members.size()); while (idx[1] == idx[0]);
        do idx[2] = below(rng, members.size()); while (idx[2] == idx[0] || idx[2] == idx[1]);
        std::array<std::pair<double, const SyntheticFont*>, 3> scored;
        for (int k = 0; k < 3; ++k)
            scored[k] = {*tag_strength(tag, members[idx[k]]->attributes), members[idx[k]]};
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second->font_id < b.second->font_id;
        });
        if (scored[0].first - scored[1].first < margin) continue;
        std::array<std::string, 2> weak = {scored[1].second->font_id, scored[2].second->font_id};
        std::sort(weak.begin(), weak.end());
        if (!seen.insert({tag, scored[0].second->font_id, weak[0], weak[1]}).second) continue;
        groups.push_back({tag, scored[0].second->font_id, weak});
    }
    return groups;
}

inline nlohmann::json attributes_to_json(const SyntheticFont& f) {
    const auto& a = f.attributes;
    return {{"font_id", f.font_id},  {"stroke", a.stroke},       {"serif_size", a.serif_size},
            {"slant", a.slant},      {"roundness", a.roundness}, {"aspect", a.aspect},
            {"bias", {f.bias.stroke, f.bias.serif, f.bias.slant, f.bias.roundness, f.bias.aspect}},
            {"clean_tags", f.clean_tags}};
}

inline FontAttributes attributes_from_json(const nlohmann::json& j) {
    FontAttributes a;
    a.stroke = j.at("stroke").get<double>();
    a.serif_size = j.at("serif_size").get<double>();
    a.slant = j.at("slant").get<double>();
    a.roundness = j.at("roundness").get<double>();
    a.aspect = j.at("aspect").get<double>();
    return a;
}

/// Reads <root>/attributes.jsonl written by the generator.
inline std::map<std::string, FontAttributes> load_synthetic_attributes(const std::filesystem::path& root) {
    std::ifstream in(root / "attributes.jsonl");
    if (!in) throw std::runtime_error("no attributes.jsonl under " + root.string());
    std::map<std::string, FontAttributes> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out[j.at("font_id").get<std::string>()] = attributes_from_json(j);
    }
    return out;
}

/// Writes a corpus directory: meta.jsonl, fonts/, allowlist.txt,
/// attributes.jsonl (ground truth) and optionally amt.jsonl.
inline std::vector<SyntheticFont> generate_synthetic_corpus(const std::filesystem::path& out_dir,
                                                            const SyntheticCorpusOptions& options) {
    auto fonts = synthesize_fonts(options.n_fonts, options.seed, options.noise);
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "fonts", ec);
    if (ec) throw CorpusError("cannot create " + out_dir.string() + ": " + ec.message());

    std::ofstream meta(out_dir / "meta.jsonl", std::ios::trunc);
    std::ofstream attrs(out_dir / "attributes.jsonl", std::ios::trunc);
    if (!meta || !attrs) throw CorpusError("cannot write corpus metadata under " + out_dir.string());
    for (const auto& f : fonts) {
        const auto stack = render_font(f.attributes);
        std::filesystem::create_directories(out_dir / "fonts" / f.font_id, ec);
        if (ec) throw CorpusError("cannot create font directory: " + ec.message());
        for (int c = 0; c < kLetterCount; ++c)
            write_file_bytes(glyph_path(out_dir, f.font_id, c), encode_png(glyph_to_image(stack.channel(c))));
        meta << meta_line(f.font_id, f.tags) << '\n';
        attrs << attributes_to_json(f).dump() << '\n';
    }
    std::ofstream allow(out_dir / "allowlist.txt", std::ios::trunc);
    for (const auto& t : synthetic_tag_set()) allow << t << '\n';
    if (options.amt_groups > 0)
        save_amt_groups(out_dir / "amt.jsonl", make_synthetic_amt_groups(fonts, options.amt_groups, options.seed));
    if (!meta || !attrs || !allow) throw CorpusError("write failed under " + out_dir.string());
    return fonts;
}

}  // namespace fontclip
