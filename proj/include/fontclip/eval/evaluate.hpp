#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "../coembed/trainer.hpp"
#include "../dataset/vocabulary.hpp"
#include "../retrieval/tag_query.hpp"
#include "metrics.hpp"
#include "rank_pairs.hpp"
#include "report.hpp"

namespace fontclip {

/// Raw features reordered to the index's column order.
inline ModalityLatents raw_stage(const EmbeddingIndex& index, const FeatureSet& raw) {
    if (raw.size() != index.size()) throw std::invalid_argument("raw features and index cover different fonts");
    ModalityLatents out{Eigen::MatrixXd(raw.image.rows(), static_cast<Eigen::Index>(raw.size())),
                        Eigen::MatrixXd(raw.tag.rows(), static_cast<Eigen::Index>(raw.size()))};
    for (std::size_t n = 0; n < raw.size(); ++n) {
        const auto pos = index.position(raw.font_ids[n]);
        if (!pos) throw std::invalid_argument("font '" + raw.font_ids[n] + "' has raw features but no latent");
        const auto c = static_cast<Eigen::Index>(*pos);
        out.image.col(c) = raw.image.col(static_cast<Eigen::Index>(n)).cast<double>();
        out.tag.col(c) = raw.tag.col(static_cast<Eigen::Index>(n)).cast<double>();
    }
    out.image = cosine_normalized(out.image);
    out.tag = cosine_normalized(out.tag);
    return out;
}

inline ModalityLatents latent_stage(const EmbeddingIndex& index) {
    return {index.latents(Side::Image), index.latents(Side::Tag)};
}

inline TagLatentFn single_tag_latents(const TagVocabulary& vocab, const TextEncoderAdapter& encoder,
                                      const nn::ProjectionHead<float>& tag_head) {
    return [&vocab, &encoder, &tag_head](const std::string& tag) {
        const std::vector<std::string> one{tag};
        return tag_latent(one, vocab, encoder, tag_head).latent;
    };
}

struct EvalInputs {
    const EmbeddingIndex* index = nullptr;
    const FeatureSet* raw_features = nullptr;  ///< optional; enables before/after comparisons
    std::map<std::string, std::vector<std::string>> font_tags;
    std::vector<std::string> vocabulary;
    TagLatentFn latent_of;
    std::span<const AmtGroup> amt_groups;
    int histogram_bins = 50;
};

struct EvalOutputs {
    EvalReport report;
    std::optional<RankPairHistogram> histogram_before;
    RankPairHistogram histogram_after;
    std::vector<std::string> warnings;
};

inline EvalOutputs evaluate(const EvalInputs& in) {
    if (!in.index) throw std::invalid_argument("evaluation needs an index");
    const auto& index = *in.index;
    if (index.size() < 3) throw std::invalid_argument("evaluation needs at least 3 fonts");
    EvalOutputs out;
    auto& r = out.report;
    r.fonts = index.size();
    r.arr_tag_to_img = average_retrieval_rank(index, Direction::TagToImage);
    r.arr_img_to_tag = average_retrieval_rank(index, Direction::ImageToTag);
    for (auto dir : {Direction::TagToImage, Direction::ImageToTag}) {
        auto m = mean_average_precision(index, in.font_tags, in.vocabulary, in.latent_of, dir);
        (dir == Direction::TagToImage ? r.map_tag_to_img : r.map_img_to_tag) = m.map;
        out.warnings.insert(out.warnings.end(), m.warnings.begin(), m.warnings.end());
    }
    if (!in.amt_groups.empty()) {
        auto amt = amt_evaluation(index, in.amt_groups, in.latent_of);
        r.amt_accuracy = amt.accuracy;
        r.amt_arr = amt.arr;
        r.amt_groups = amt.evaluated;
        out.warnings.insert(out.warnings.end(), amt.warnings.begin(), amt.warnings.end());
    }
    const auto after = latent_stage(index);
    r.pc1_after = pc1_correlation(after.image, after.tag);
    if (in.raw_features) {
        const auto before = raw_stage(index, *in.raw_features);
        const auto pairs = all_rank_pairs(before, after, index.font_ids());
        const int max_rank = static_cast<int>(index.size()) - 1;
        out.histogram_before = rank_pair_histogram(pairs.before, max_rank, in.histogram_bins);
        out.histogram_after = rank_pair_histogram(pairs.after, max_rank, in.histogram_bins);
        r.spearman_before = out.histogram_before->spearman;
        r.pc1_before = pc1_correlation(before.image, before.tag);
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        const auto& ids = index.font_ids();
        for (std::size_t n = 0; n < ids.size(); ++n)
            for (std::size_t m = 0; m < ids.size(); ++m)
                if (n != m) pairs.emplace_back(n, m);
        const auto st = rank_pairs(after, after, ids, std::move(pairs));
        out.histogram_after = rank_pair_histogram(st.after, static_cast<int>(index.size()) - 1, in.histogram_bins);
    }
    r.spearman_after = out.histogram_after.spearman;
    return out;
}

}  // namespace fontclip
