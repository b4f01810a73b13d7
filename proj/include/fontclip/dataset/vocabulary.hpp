#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fontclip {

/// Corpus tag counts plus a frequency rank (1 = most frequent, ties broken
/// lexicographically).
class TagVocabulary {
public:
    TagVocabulary() = default;

    explicit TagVocabulary(std::map<std::string, std::int64_t> counts) : counts_(std::move(counts)) {
        for (const auto& [tag, n] : counts_) {
            if (n < 0) throw std::invalid_argument("negative tag count for '" + tag + "'");
        }
        rebuild_ranks();
    }

    /// Counts each distinct tag once per font.
    template <typename Range>
    static TagVocabulary from_tag_lists(const Range& tag_lists) {
        std::map<std::string, std::int64_t> counts;
        for (const auto& tags : tag_lists) {
            std::set<std::string> seen(tags.begin(), tags.end());
            for (const auto& t : seen) ++counts[t];
        }
        return TagVocabulary(std::move(counts));
    }

    [[nodiscard]] bool contains(const std::string& tag) const { return counts_.contains(tag); }
    [[nodiscard]] std::size_t size() const { return counts_.size(); }
    [[nodiscard]] bool empty() const { return counts_.empty(); }

    [[nodiscard]] std::int64_t count(const std::string& tag) const {
        auto it = counts_.find(tag);
        return it == counts_.end() ? 0 : it->second;
    }

    [[nodiscard]] std::optional<int> rank(const std::string& tag) const {
        auto it = ranks_.find(tag);
        if (it == ranks_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] const std::map<std::string, std::int64_t>& counts() const { return counts_; }

    /// Tags ordered by rank.
    [[nodiscard]] const std::vector<std::string>& by_frequency() const { return ordered_; }

    /// Strict weak order: more frequent first, then lexicographic.
    [[nodiscard]] bool more_frequent(const std::string& a, const std::string& b) const {
        const auto ca = count(a);
        const auto cb = count(b);
        if (ca != cb) return ca > cb;
        return a < b;
    }

    friend bool operator==(const TagVocabulary& a, const TagVocabulary& b) { return a.counts_ == b.counts_; }

private:
    void rebuild_ranks() {
        ordered_.clear();
        for (const auto& [tag, n] : counts_) ordered_.push_back(tag);
        std::sort(ordered_.begin(), ordered_.end(),
                  [this](const std::string& a, const std::string& b) { return more_frequent(a, b); });
        ranks_.clear();
        for (std::size_t i = 0; i < ordered_.size(); ++i) ranks_[ordered_[i]] = static_cast<int>(i) + 1;
    }

    std::map<std::string, std::int64_t> counts_;
    std::map<std::string, int> ranks_;
    std::vector<std::string> ordered_;
};

}  // namespace fontclip
