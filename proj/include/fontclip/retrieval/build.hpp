#pragma once

#include "../coembed/trainer.hpp"
#include "index.hpp"

namespace fontclip {

inline std::vector<LatentPair> latent_pairs(const CoembeddingModel& model, const FeatureSet& features) {
    const Eigen::MatrixXf li = model.project_images(features.image);
    const Eigen::MatrixXf lt = model.project_tags(features.tag);
    std::vector<LatentPair> out(features.size());
    for (std::size_t n = 0; n < features.size(); ++n) {
        const auto c = static_cast<Eigen::Index>(n);
        out[n].font_id = features.font_ids[n];
        out[n].image_latent.assign(li.col(c).data(), li.col(c).data() + li.rows());
        out[n].tag_latent.assign(lt.col(c).data(), lt.col(c).data() + lt.rows());
    }
    return out;
}

inline EmbeddingIndex build_index(const CoembeddingModel& model, const FeatureSet& features,
                                  nlohmann::json metadata = nlohmann::json::object()) {
    return EmbeddingIndex::build(latent_pairs(model, features), std::move(metadata));
}

}  // namespace fontclip
