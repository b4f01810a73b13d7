#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "../common/log.hpp"
#include "../dataset/vocabulary.hpp"

namespace fontclip {

inline constexpr std::size_t kMaxPromptTags = 10;

/// Token budget of the CLIP text encoder, including start and end markers.
inline constexpr std::size_t kClipContextTokens = 77;

struct Prompt {
    std::string text;
    std::vector<std::string> used_tags;  ///< descending corpus frequency

    bool operator==(const Prompt&) const = default;
};

struct PromptOptions {
    std::size_t max_tags = kMaxPromptTags;
    std::size_t context_tokens = kClipContextTokens;
};

inline constexpr std::array<const char*, kMaxPromptTags> kOrdinals = {
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"};

namespace detail {

inline std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

inline std::string join_list(std::span<const std::string> items) {
    if (items.size() == 1) return items[0];
    if (items.size() == 2) return items[0] + " and " + items[1];
    std::string out;
    for (std::size_t i = 0; i + 1 < items.size(); ++i) out += items[i] + ", ";
    return out + "and " + items.back();
}

inline bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace detail

/// Fills the template for tags that are already in frequency order.
///
///     1 tag:  "First impression is X."
///     2 tags: "First and second impressions are X and Y, respectively."
///     3+:     "First, second, and third impressions are X, Y, and Z, respectively."
inline std::string render_prompt(std::span<const std::string> ordered_tags) {
    const std::size_t k = ordered_tags.size();
    if (k == 0) throw std::invalid_argument("a prompt needs at least one tag");
    if (k > kMaxPromptTags) throw std::invalid_argument("a prompt holds at most 10 tags");
    if (k == 1) return "First impression is " + ordered_tags[0] + ".";
    std::vector<std::string> ordinals(kOrdinals.begin(), kOrdinals.begin() + static_cast<std::ptrdiff_t>(k));
    return detail::capitalized(detail::join_list(ordinals)) + " impressions are " + detail::join_list(ordered_tags) +
           ", respectively.";
}

/// Rough CLIP token count: one per word and per punctuation mark, plus the
/// start and end markers. BPE splits rare words further, so this is a lower
/// bound and the budget is applied with that in mind.
inline std::size_t estimate_tokens(std::string_view text) {
    std::size_t tokens = 2;
    bool in_word = false;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            if (!in_word) ++tokens;
            in_word = true;
        } else {
            in_word = false;
            if (!std::isspace(c)) ++tokens;
        }
    }
    return tokens;
}

/// Orders by corpus frequency (lexicographic tie-break), keeps at most
/// `max_tags`, and drops trailing tags while the text exceeds the context.
inline Prompt build_prompt(std::span<const std::string> tags, const TagVocabulary& vocab, const PromptOptions& options = {},
                           std::vector<std::string>* warnings = nullptr) {
    if (tags.empty()) throw std::invalid_argument("cannot build a prompt from an empty tag list");
    std::vector<std::string> ordered;
    for (const auto& t : tags) {
        if (!vocab.contains(t)) throw std::invalid_argument("tag '" + t + "' is not in the vocabulary");
        if (std::find(ordered.begin(), ordered.end(), t) == ordered.end()) ordered.push_back(t);
    }
    std::sort(ordered.begin(), ordered.end(),
              [&](const std::string& a, const std::string& b) { return vocab.more_frequent(a, b); });
    ordered.resize(std::min({ordered.size(), options.max_tags, kMaxPromptTags}));

    std::string text = render_prompt(ordered);
    if (estimate_tokens(text) > options.context_tokens) {
        const std::size_t before = ordered.size();
        while (ordered.size() > 1 && estimate_tokens(text) > options.context_tokens) {
            ordered.pop_back();
            text = render_prompt(ordered);
        }
        const std::string msg = "prompt exceeded the " + std::to_string(options.context_tokens) +
                                "-token context; kept " + std::to_string(ordered.size()) + " of " +
                                std::to_string(before) + " tags";
        log::warn(msg);
        if (warnings) warnings->push_back(msg);
    }
    return {std::move(text), std::move(ordered)};
}

inline Prompt build_prompt(const std::vector<std::string>& tags, const TagVocabulary& vocab,
                           const PromptOptions& options = {}, std::vector<std::string>* warnings = nullptr) {
    return build_prompt(std::span<const std::string>(tags), vocab, options, warnings);
}

/// Inverse of render_prompt. Returns nullopt when the text does not follow
/// the template or the tag list cannot be split unambiguously.
inline std::optional<std::vector<std::string>> parse_prompt(std::string_view text) {
    using detail::starts_with;
    if (starts_with(text, "First impression is ") && text.size() > 21 && text.back() == '.') {
        auto tag = std::string(text.substr(20, text.size() - 21));
        if (tag.empty()) return std::nullopt;
        return std::vector<std::string>{std::move(tag)};
    }
    const std::string_view suffix = ", respectively.";
    if (text.size() < suffix.size() || text.substr(text.size() - suffix.size()) != suffix) return std::nullopt;
    text.remove_suffix(suffix.size());
    const auto are = text.find(" impressions are ");
    if (are == std::string_view::npos) return std::nullopt;
    const std::string_view head = text.substr(0, are);
    const std::string_view body = text.substr(are + 17);

    std::size_t k = 0;
    for (std::size_t n = 2; n <= kMaxPromptTags; ++n) {
        std::vector<std::string> ordinals(kOrdinals.begin(), kOrdinals.begin() + static_cast<std::ptrdiff_t>(n));
        if (head == detail::capitalized(detail::join_list(ordinals))) k = n;
    }
    if (k == 0) return std::nullopt;

    std::vector<std::string> tags;
    if (k == 2) {
        const auto mid = body.find(" and ");
        if (mid == std::string_view::npos || body.find(" and ", mid + 1) != std::string_view::npos) return std::nullopt;
        tags = {std::string(body.substr(0, mid)), std::string(body.substr(mid + 5))};
    } else {
        std::size_t start = 0;
        while (true) {
            const auto comma = body.find(", ", start);
            if (comma == std::string_view::npos) {
                tags.emplace_back(body.substr(start));
                break;
            }
            tags.emplace_back(body.substr(start, comma - start));
            start = comma + 2;
        }
        if (tags.size() != k || !starts_with(tags.back(), "and ")) return std::nullopt;
        tags.back().erase(0, 4);
    }
    for (const auto& t : tags)
        if (t.empty()) return std::nullopt;
    return tags;
}

}  // namespace fontclip
