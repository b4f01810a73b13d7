#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "font_record.hpp"
#include "vocabulary.hpp"

namespace fontclip {

struct TagFilterConfig {
    /// Tags outside the allowlist are removed; nullopt keeps everything.
    std::optional<std::set<std::string>> allowlist;
    std::int64_t min_occurrences = 50;
    std::size_t max_tags = 10;
};

struct PreprocessResult {
    std::vector<FontRecord> records;
    TagVocabulary vocabulary;
    std::size_t dropped_fonts = 0;
};

namespace detail {

template <typename Tags>
TagVocabulary count_tags(const std::vector<FontRecord>& records, Tags&& tags_of) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& r : records)
        for (const auto& t : tags_of(r)) ++counts[t];
    return TagVocabulary(std::move(counts));
}

}  // namespace detail

/// Tag cleanup, in order:
///   (a) drop tags outside the allowlist,
///   (b) fonts with more than max_tags keep their max_tags most frequent tags
///       (corpus-global counts from `vocab`, lexicographic tie-break),
///   (c) drop tags with fewer than min_occurrences uses after (a)-(b),
///   (d) drop fonts left with no tags.
/// Surviving tags keep their original relative order within each font.
inline PreprocessResult preprocess_tags(std::vector<FontRecord> records, const TagVocabulary& vocab,
                                        const TagFilterConfig& config = {}) {
    for (auto& r : records) {
        if (config.allowlist) {
            std::erase_if(r.tags, [&](const std::string& t) { return !config.allowlist->contains(t); });
        }
        if (r.tags.size() > config.max_tags) {
            std::vector<std::string> ranked = r.tags;
            std::sort(ranked.begin(), ranked.end(),
                      [&](const std::string& a, const std::string& b) { return vocab.more_frequent(a, b); });
            const std::set<std::string> keep(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(config.max_tags));
            std::erase_if(r.tags, [&](const std::string& t) { return !keep.contains(t); });
        }
    }
    const auto counts = detail::count_tags(records, [](const FontRecord& r) -> const auto& { return r.tags; });
    for (auto& r : records) {
        std::erase_if(r.tags, [&](const std::string& t) { return counts.count(t) < config.min_occurrences; });
    }
    PreprocessResult out;
    const auto before = records.size();
    std::erase_if(records, [](const FontRecord& r) { return r.tags.empty(); });
    out.dropped_fonts = before - records.size();
    out.vocabulary = detail::count_tags(records, [](const FontRecord& r) -> const auto& { return r.tags; });
    out.records = std::move(records);
    return out;
}

}  // namespace fontclip
