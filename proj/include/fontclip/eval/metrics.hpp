#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "../common/log.hpp"
#include "../dataset/amt.hpp"
#include "../retrieval/index.hpp"

namespace fontclip {

enum class Direction { TagToImage, ImageToTag };

inline const char* direction_name(Direction d) { return d == Direction::TagToImage ? "tag_to_img" : "img_to_tag"; }

/// Unit latent of a single-tag prompt.
using TagLatentFn = std::function<std::vector<float>(const std::string& tag)>;

/// Rank of each font's own counterpart among all N candidates of the other
/// modality: 1 + number of strictly greater similarities (the own item wins
/// its tie class).
inline std::vector<int> retrieval_ranks(const EmbeddingIndex& index, Direction dir) {
    // s(n, m) = Ĩ_n . T̃_m
    const Eigen::MatrixXd s = index.latents(Side::Image).transpose() * index.latents(Side::Tag);
    const auto n = s.rows();
    std::vector<int> ranks(static_cast<std::size_t>(n));
    for (Eigen::Index q = 0; q < n; ++q) {
        const double own = s(q, q);
        int greater = 0;
        for (Eigen::Index c = 0; c < n; ++c) {
            const double v = dir == Direction::ImageToTag ? s(q, c) : s(c, q);
            greater += v > own;
        }
        ranks[static_cast<std::size_t>(q)] = 1 + greater;
    }
    return ranks;
}

inline double average_retrieval_rank(const EmbeddingIndex& index, Direction dir) {
    const auto r = retrieval_ranks(index, dir);
    double sum = 0;
    for (int v : r) sum += v;
    return sum / static_cast<double>(r.size());
}

/// AP over a full ranking given as relevance flags in rank order. nullopt
/// when nothing is relevant.
inline std::optional<double> average_precision(const std::vector<bool>& relevant_in_rank_order) {
    double sum = 0;
    int hits = 0;
    for (std::size_t i = 0; i < relevant_in_rank_order.size(); ++i) {
        if (!relevant_in_rank_order[i]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    if (hits == 0) return std::nullopt;
    return sum / hits;
}

struct MapResult {
    double map = 0.0;
    std::size_t queries = 0;
    std::vector<std::string> warnings;
};

/// tag->img: every vocabulary tag queries the image latents, relevant fonts
/// carry the tag. img->tag: every font ranks all vocabulary tags by its
/// image latent, relevant tags are its own.
inline MapResult mean_average_precision(const EmbeddingIndex& index,
                                        const std::map<std::string, std::vector<std::string>>& font_tags,
                                        const std::vector<std::string>& vocabulary, const TagLatentFn& latent_of,
                                        Direction dir) {
    MapResult out;
    const auto n = index.size();
    std::vector<std::set<std::string>> tags_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = font_tags.find(index.font_ids()[i]);
        if (it != font_tags.end()) tags_of[i].insert(it->second.begin(), it->second.end());
    }
    std::vector<std::string> vocab = vocabulary;
    std::sort(vocab.begin(), vocab.end());
    Eigen::MatrixXd tag_latents(index.dim(), static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t t = 0; t < vocab.size(); ++t) {
        const auto v = latent_of(vocab[t]);
        for (int k = 0; k < index.dim(); ++k) tag_latents(k, static_cast<Eigen::Index>(t)) = v[static_cast<std::size_t>(k)];
    }
    // sim(font, tag)
    const Eigen::MatrixXd sim = index.latents(Side::Image).transpose() * tag_latents;
    double total = 0;
    const auto rank_and_score = [](const Eigen::VectorXd& s, const std::function<bool(std::size_t)>& rel) {
        std::vector<std::size_t> order(static_cast<std::size_t>(s.size()));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return s(static_cast<Eigen::Index>(a)) > s(static_cast<Eigen::Index>(b)) ||
                   (s(static_cast<Eigen::Index>(a)) == s(static_cast<Eigen::Index>(b)) && a < b);
        });
        std::vector<bool> flags;
        for (auto i : order) flags.push_back(rel(i));
        return average_precision(flags);
    };
    if (dir == Direction::TagToImage) {
        for (std::size_t t = 0; t < vocab.size(); ++t) {
            const auto ap = rank_and_score(sim.col(static_cast<Eigen::Index>(t)),
                                           [&](std::size_t i) { return tags_of[i].contains(vocab[t]); });
            if (!ap) {
                const std::string msg = "tag '" + vocab[t] + "' has no relevant font; excluded from mAP";
                log::warn(msg);
                out.warnings.push_back(msg);
                continue;
            }
            total += *ap;
            ++out.queries;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto ap = rank_and_score(sim.row(static_cast<Eigen::Index>(i)).transpose(),
                                           [&](std::size_t t) { return tags_of[i].contains(vocab[t]); });
            if (!ap) {
                out.warnings.push_back("font '" + index.font_ids()[i] + "' has no vocabulary tag; excluded from mAP");
                continue;
            }
            total += *ap;
            ++out.queries;
        }
    }
    out.map = out.queries ? total / static_cast<double>(out.queries) : 0.0;
    return out;
}

struct AmtResult {
    double accuracy = 0.0;
    double arr = 0.0;  ///< mean rank of the strong font among the three
    std::size_t evaluated = 0;
    std::vector<int> ranks;
    std::vector<std::string> warnings;
};

/// Nearest-of-three test per group. Ties among the three go to the smaller font id.
inline AmtResult amt_evaluation(const EmbeddingIndex& index, std::span<const AmtGroup> groups,
                                const TagLatentFn& latent_of) {
    AmtResult out;
    std::map<std::string, std::vector<float>> cache;
    int correct = 0;
    double rank_sum = 0;
    for (const auto& g : groups) {
        const std::array<std::string, 3> fonts = {g.strong_font, g.weak_fonts[0], g.weak_fonts[1]};
        bool missing = false;
        for (const auto& f : fonts) missing |= !index.position(f);
        if (missing) {
            const std::string msg = "AMT group for tag '" + g.tag + "' references a font without a latent; skipped";
            log::warn(msg);
            out.warnings.push_back(msg);
            continue;
        }
        auto it = cache.find(g.tag);
        if (it == cache.end()) it = cache.emplace(g.tag, latent_of(g.tag)).first;
        const auto& q = it->second;
        std::array<double, 3> s{};
        for (int i = 0; i < 3; ++i) {
            const auto col = index.latents(Side::Image).col(static_cast<Eigen::Index>(*index.position(fonts[i])));
            double dot = 0;
            for (Eigen::Index k = 0; k < col.size(); ++k) dot += col(k) * q[static_cast<std::size_t>(k)];
            s[i] = dot;
        }
        int rank = 1;
        for (int i = 1; i < 3; ++i) rank += s[i] > s[0] || (s[i] == s[0] && fonts[i] < fonts[0]);
        out.ranks.push_back(rank);
        correct += rank == 1;
        rank_sum += rank;
        ++out.evaluated;
    }
    if (out.evaluated) {
        out.accuracy = static_cast<double>(correct) / static_cast<double>(out.evaluated);
        out.arr = rank_sum / static_cast<double>(out.evaluated);
    }
    return out;
}

}  // namespace fontclip
