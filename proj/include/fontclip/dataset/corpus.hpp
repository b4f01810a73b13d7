#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/binary_io.hpp"
#include "../common/hash.hpp"
#include "../common/log.hpp"
#include "../common/png_io.hpp"
#include "font_record.hpp"
#include "vocabulary.hpp"

namespace fontclip {

// On-disk corpus:
//   <root>/meta.jsonl              {"font_id": str, "tags": [str, ...]} per line
//   <root>/fonts/<id>/<L>.png      26 single-channel 64x64 PNGs, A.png .. Z.png
//   <root>/exclude.txt (optional)  font ids to skip, one per line
// PNG value v maps to intensity v/255 (255 = ink).

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CorpusOptions {
    /// Defaults to <root>/exclude.txt when that file exists.
    std::optional<std::filesystem::path> exclusion_list;
    bool load_glyphs = true;
};

struct Corpus {
    std::vector<FontRecord> records;
    TagVocabulary vocabulary;
    std::vector<std::string> warnings;
};

inline std::filesystem::path glyph_path(const std::filesystem::path& root, const std::string& font_id, int channel) {
    return root / "fonts" / font_id / (std::string(1, letter_of(channel)) + ".png");
}

/// One tag (or id) per line; blank lines and surrounding whitespace ignored.
inline std::set<std::string> read_line_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path.string());
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r\n");
        out.insert(line.substr(b, e - b + 1));
    }
    return out;
}

inline std::set<std::string> load_allowlist(const std::filesystem::path& path) { return read_line_set(path); }

inline GrayImage glyph_to_image(std::span<const float> channel) {
    GrayImage img{kGlyphSize, kGlyphSize, std::vector<std::uint8_t>(kGlyphPixels)};
    for (std::size_t i = 0; i < kGlyphPixels; ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(channel[i], 0.0f, 1.0f) * 255.0f));
    return img;
}

/// Decodes one glyph channel from PNG bytes; nullopt when undecodable or not 64x64.
inline std::optional<std::vector<float>> decode_glyph_png(const std::vector<std::uint8_t>& bytes, const std::string& name,
                                                           std::string* why) {
    GrayImage img;
    try {
        img = decode_png(bytes);
    } catch (const std::exception& e) {
        if (why) *why = name + ": " + e.what();
        return std::nullopt;
    }
    if (img.width != kGlyphSize || img.height != kGlyphSize) {
        if (why) *why = name + " is not 64x64";
        return std::nullopt;
    }
    std::vector<float> out(kGlyphPixels);
    for (std::size_t i = 0; i < kGlyphPixels; ++i) out[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    return out;
}

/// Reads one glyph channel; nullopt when the file is missing or not 64x64.
inline std::optional<std::vector<float>> read_glyph_png(const std::filesystem::path& file, std::string* why) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(file, ec)) {
        if (why) *why = "missing " + file.filename().string();
        return std::nullopt;
    }
    return decode_glyph_png(read_file_bytes(file), file.filename().string(), why);
}

inline std::optional<GlyphStack> read_glyph_stack(const std::filesystem::path& root, const std::string& font_id,
                                                  std::string* why) {
    std::vector<float> pixels;
    pixels.reserve(kStackValues);
    for (int c = 0; c < kLetterCount; ++c) {
        auto ch = read_glyph_png(glyph_path(root, font_id, c), why);
        if (!ch) return std::nullopt;
        pixels.insert(pixels.end(), ch->begin(), ch->end());
    }
    return GlyphStack(std::move(pixels));
}

/// Parses meta.jsonl. Malformed lines are hard errors naming the line.
inline std::vector<FontMeta> read_meta(const std::filesystem::path& meta_path) {
    std::vector<FontMeta> out;
    std::ifstream in(meta_path);
    if (!in) throw CorpusError("cannot open " + meta_path.string());
    std::string line;
    std::set<std::string> seen;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        const auto fail = [&](const std::string& why) {
            throw CorpusError(meta_path.string() + ":" + std::to_string(lineno) + ": " + why);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            fail("invalid JSON");
        }
        if (!j.is_object() || !j.contains("font_id") || !j["font_id"].is_string()) fail("missing string font_id");
        if (!j.contains("tags") || !j["tags"].is_array()) fail("missing tags array");
        FontMeta m;
        m.font_id = j["font_id"].get<std::string>();
        if (m.font_id.empty() || m.font_id.find('/') != std::string::npos || m.font_id == "." || m.font_id == "..")
            fail("font_id must be a non-empty path segment");
        if (!seen.insert(m.font_id).second) fail("duplicate font_id '" + m.font_id + "'");
        std::set<std::string> dedupe;
        for (const auto& t : j["tags"]) {
            if (!t.is_string()) fail("tags must be strings");
            auto tag = t.get<std::string>();
            if (dedupe.insert(tag).second) m.tags.push_back(std::move(tag));
        }
        out.push_back(std::move(m));
    }
    return out;
}

inline std::set<std::string> exclusion_set(const std::filesystem::path& root, const CorpusOptions& options) {
    if (options.exclusion_list) return read_line_set(*options.exclusion_list);
    const auto p = root / "exclude.txt";
    std::error_code ec;
    return std::filesystem::exists(p, ec) ? read_line_set(p) : std::set<std::string>{};
}

/// Loads records with raw tags; the vocabulary counts every loaded record.
inline Corpus load_corpus(const std::filesystem::path& root, const CorpusOptions& options = {}) {
    Corpus corpus;
    const auto meta_path = root / "meta.jsonl";
    std::error_code ec;
    if (!std::filesystem::exists(meta_path, ec)) {
        if (!std::filesystem::is_directory(root, ec)) throw CorpusError("corpus root does not exist: " + root.string());
        return corpus;
    }
    const auto excluded = exclusion_set(root, options);
    for (auto& m : read_meta(meta_path)) {
        if (excluded.contains(m.font_id)) continue;
        FontRecord rec;
        rec.font_id = m.font_id;
        rec.tags = std::move(m.tags);
        if (options.load_glyphs) {
            std::string why;
            auto stack = read_glyph_stack(root, rec.font_id, &why);
            if (!stack) {
                corpus.warnings.push_back("rejecting font '" + rec.font_id + "': " + why);
                log::warn(corpus.warnings.back());
                continue;
            }
            rec.glyphs = std::move(*stack);
        }
        corpus.records.push_back(std::move(rec));
    }
    std::vector<std::vector<std::string>> lists;
    lists.reserve(corpus.records.size());
    for (const auto& r : corpus.records) lists.push_back(r.tags);
    corpus.vocabulary = TagVocabulary::from_tag_lists(lists);
    return corpus;
}

/// Content hash of meta.jsonl; identifies a corpus in index and service headers.
inline std::string corpus_hash(const std::filesystem::path& root) {
    const auto meta_path = root / "meta.jsonl";
    std::error_code ec;
    if (!std::filesystem::exists(meta_path, ec)) return hex_digest(Fnv1a{}.digest());
    const auto bytes = read_file_bytes(meta_path);
    return hex_digest(Fnv1a{}.update(bytes.data(), bytes.size()).digest());
}

inline std::string meta_line(const std::string& font_id, const std::vector<std::string>& tags) {
    return nlohmann::json{{"font_id", font_id}, {"tags", tags}}.dump();
}

/// Writes records in the on-disk format (used by the generator and tests).
inline void write_corpus(const std::filesystem::path& root, const std::vector<FontRecord>& records) {
    std::error_code ec;
    std::filesystem::create_directories(root / "fonts", ec);
    if (ec) throw CorpusError("cannot create " + (root / "fonts").string() + ": " + ec.message());
    std::ofstream meta(root / "meta.jsonl", std::ios::trunc);
    if (!meta) throw CorpusError("cannot write " + (root / "meta.jsonl").string());
    for (const auto& r : records) {
        std::filesystem::create_directories(root / "fonts" / r.font_id, ec);
        if (ec) throw CorpusError("cannot create font directory for " + r.font_id + ": " + ec.message());
        for (int c = 0; c < kLetterCount; ++c) {
            const auto png = encode_png(glyph_to_image(r.glyphs.channel(c)));
            write_file_bytes(glyph_path(root, r.font_id, c), png);
        }
        meta << meta_line(r.font_id, r.tags) << '\n';
    }
    if (!meta) throw CorpusError("write failed for meta.jsonl");
}

}  // namespace fontclip
