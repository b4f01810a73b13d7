#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/binary_io.hpp"
#include "../common/hash.hpp"
#include "../dataset/corpus.hpp"
#include "../dataset/preprocess.hpp"
#include "../dataset/split.hpp"

namespace fontclip {

inline std::string file_hash(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return hex_digest(Fnv1a{}.update(bytes.data(), bytes.size()).digest());
}

/// `{"min_occurrences", "max_tags", "allowlist": path | null}`. A relative
/// allowlist path resolves against the corpus root; by default the corpus's
/// own allowlist.txt is used when present.
struct DatasetConfig {
    std::int64_t min_occurrences = 50;
    std::size_t max_tags = 10;
    std::optional<std::string> allowlist;
    bool use_corpus_allowlist = true;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"min_occurrences", min_occurrences},
                {"max_tags", max_tags},
                {"allowlist", allowlist ? nlohmann::json(*allowlist) : nlohmann::json(nullptr)},
                {"use_corpus_allowlist", use_corpus_allowlist}};
    }

    static DatasetConfig from_json(const nlohmann::json& j) {
        DatasetConfig c;
        c.min_occurrences = j.value("min_occurrences", c.min_occurrences);
        c.max_tags = j.value("max_tags", c.max_tags);
        if (j.contains("allowlist") && !j.at("allowlist").is_null()) c.allowlist = j.at("allowlist").get<std::string>();
        c.use_corpus_allowlist = j.value("use_corpus_allowlist", c.use_corpus_allowlist);
        if (c.min_occurrences < 1) throw std::invalid_argument("min_occurrences must be >= 1");
        if (c.max_tags < 1) throw std::invalid_argument("max_tags must be >= 1");
        return c;
    }

    [[nodiscard]] TagFilterConfig filter(const std::filesystem::path& root) const {
        TagFilterConfig f;
        f.min_occurrences = min_occurrences;
        f.max_tags = max_tags;
        if (allowlist) {
            const std::filesystem::path p(*allowlist);
            f.allowlist = load_allowlist(p.is_absolute() ? p : root / p);
        } else if (use_corpus_allowlist && std::filesystem::exists(root / "allowlist.txt")) {
            f.allowlist = load_allowlist(root / "allowlist.txt");
        }
        return f;
    }
};

/// A corpus after tag preprocessing, identified by the hash of its meta.jsonl.
struct PreparedCorpus {
    std::filesystem::path root;
    std::vector<FontRecord> records;
    TagVocabulary vocabulary;
    std::string corpus_hash;
    std::size_t dropped_fonts = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] std::map<std::string, const FontRecord*> by_id() const {
        std::map<std::string, const FontRecord*> out;
        for (const auto& r : records) out[r.font_id] = &r;
        return out;
    }

    [[nodiscard]] std::vector<const FontRecord*> part(const std::vector<std::string>& ids) const {
        const auto index = by_id();
        std::vector<const FontRecord*> out;
        for (const auto& id : ids)
            if (const auto it = index.find(id); it != index.end()) out.push_back(it->second);
        return out;
    }
};

inline PreparedCorpus prepare_corpus(const std::filesystem::path& root, const DatasetConfig& config,
                                     bool load_glyphs = true) {
    PreparedCorpus out;
    out.root = root;
    auto raw = load_corpus(root, {.exclusion_list = std::nullopt, .load_glyphs = load_glyphs});
    if (raw.records.empty()) throw CorpusError("corpus at " + root.string() + " has no usable fonts");
    auto pre = preprocess_tags(std::move(raw.records), raw.vocabulary, config.filter(root));
    if (pre.records.empty()) throw CorpusError("no font keeps a tag after preprocessing " + root.string());
    out.records = std::move(pre.records);
    out.vocabulary = std::move(pre.vocabulary);
    out.dropped_fonts = pre.dropped_fonts;
    out.warnings = std::move(raw.warnings);
    out.corpus_hash = corpus_hash(root);
    return out;
}

/// Loads the split at `path`, or creates it from the prepared corpus and
/// saves it there. A loaded split must only name fonts of the corpus.
inline DatasetSplit ensure_split(const std::filesystem::path& path, const PreparedCorpus& corpus, std::uint64_t seed,
                                 SplitFractions fractions = {}) {
    if (std::filesystem::exists(path)) {
        auto s = load_split(path);
        const auto ids = corpus.by_id();
        for (const auto* part : {&s.train, &s.val, &s.test})
            for (const auto& id : *part)
                if (!ids.contains(id))
                    throw CorpusError("split " + path.string() + " names font '" + id + "' absent from the corpus");
        return s;
    }
    auto s = make_split(corpus.records, fractions, seed);
    save_split(path, s);
    return s;
}

inline std::vector<FontRecord> copy_records(const std::vector<const FontRecord*>& ptrs) {
    std::vector<FontRecord> out;
    out.reserve(ptrs.size());
    for (const auto* p : ptrs) out.push_back(*p);
    return out;
}

/// Provenance stored in a checkpoint header; later stages read it back.
inline nlohmann::json checkpoint_provenance(const PreparedCorpus& corpus, const std::filesystem::path& encoder_path,
                                            const nlohmann::json& text_encoder, const DatasetConfig& dataset) {
    return {{"corpus_hash", corpus.corpus_hash},
            {"encoder_hash", file_hash(encoder_path)},
            {"text_encoder", text_encoder},
            {"dataset", dataset.to_json()}};
}

/// Index metadata checked by the service at startup.
inline nlohmann::json index_provenance(const PreparedCorpus& corpus, const std::filesystem::path& checkpoint_path,
                                       const std::filesystem::path& encoder_path, const DatasetConfig& dataset,
                                       const std::string& part) {
    return {{"corpus_hash", corpus.corpus_hash},
            {"checkpoint_hash", file_hash(checkpoint_path)},
            {"encoder_hash", file_hash(encoder_path)},
            {"dataset", dataset.to_json()},
            {"part", part}};
}

}  // namespace fontclip
