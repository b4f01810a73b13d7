#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "../coembed/projection_head.hpp"
#include "../prompt/text_encoder.hpp"
#include "index.hpp"

namespace fontclip {

/// Unknown tag, with the nearest vocabulary entries by edit distance.
class UnknownTagError : public std::invalid_argument {
public:
    UnknownTagError(std::string tag, std::vector<std::string> suggestions)
        : std::invalid_argument(make_message(tag, suggestions)), tag_(std::move(tag)), suggestions_(std::move(suggestions)) {}

    [[nodiscard]] const std::string& tag() const { return tag_; }
    [[nodiscard]] const std::vector<std::string>& suggestions() const { return suggestions_; }

private:
    static std::string make_message(const std::string& tag, const std::vector<std::string>& s) {
        std::string m = "unknown tag '" + tag + "'";
        if (!s.empty()) {
            m += "; did you mean ";
            for (std::size_t i = 0; i < s.size(); ++i) m += (i ? ", '" : "'") + s[i] + "'";
        }
        return m;
    }

    std::string tag_;
    std::vector<std::string> suggestions_;
};

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::vector<std::string> nearest_tags(const std::string& tag, const TagVocabulary& vocab, std::size_t n = 3) {
    std::vector<std::pair<std::size_t, std::string>> scored;
    for (const auto& [t, count] : vocab.counts()) scored.emplace_back(edit_distance(tag, t), t);
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(n, scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

inline void require_known_tags(std::span<const std::string> tags, const TagVocabulary& vocab) {
    for (const auto& t : tags)
        if (!vocab.contains(t)) throw UnknownTagError(t, nearest_tags(t, vocab));
}

struct TagLatent {
    Prompt prompt;
    std::vector<float> latent;  ///< M_tag(E_tag(prompt)), unit norm
};

/// Prompt -> E_tag -> M_tag -> normalize.
inline TagLatent tag_latent(std::span<const std::string> tags, const TagVocabulary& vocab,
                            const TextEncoderAdapter& encoder, const nn::ProjectionHead<float>& tag_head) {
    require_known_tags(tags, vocab);
    TagLatent out;
    out.prompt = build_prompt(tags, vocab);
    const auto feature = encode_impression(encoder, out.prompt, tag_head.config().in_dim);
    out.latent = tag_head.project(feature.values);
    return out;
}

struct SingleTagResult {
    Prompt prompt;
    RetrievalResult results;
    std::size_t hit_count = 0;  ///< results whose font carries the query tag
};

/// Single-tag image retrieval. `font_tags` (font_id -> tags) enables the hit count.
inline SingleTagResult query_by_single_tag(const EmbeddingIndex& index, const std::string& tag, const TagVocabulary& vocab,
                                           const TextEncoderAdapter& encoder, const nn::ProjectionHead<float>& tag_head,
                                           std::size_t k,
                                           const std::map<std::string, std::vector<std::string>>* font_tags = nullptr) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    const std::vector<std::string> one{tag};
    auto tl = tag_latent(one, vocab, encoder, tag_head);
    SingleTagResult out;
    out.results = index.query_by_tag_latent(tl.latent, k);
    out.prompt = std::move(tl.prompt);
    if (font_tags) {
        for (const auto& r : out.results) {
            const auto it = font_tags->find(r.font_id);
            if (it != font_tags->end() && std::find(it->second.begin(), it->second.end(), tag) != it->second.end())
                ++out.hit_count;
        }
    }
    return out;
}

}  // namespace fontclip
