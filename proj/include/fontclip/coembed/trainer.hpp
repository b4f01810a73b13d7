#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../autoencoder/adam.hpp"
#include "../autoencoder/pretrain.hpp"
#include "../autoencoder/weights_io.hpp"
#include "../dataset/font_record.hpp"
#include "../prompt/text_encoder.hpp"
#include "projection_head.hpp"
#include "sce.hpp"

namespace fontclip {

inline constexpr int kPaperBatchSize = 8192;
inline constexpr int kDeskBatchSize = 128;

struct CoembedConfig {
    int batch_size = kDeskBatchSize;
    int grad_accumulation = 1;  ///< micro-batches summed per optimizer step
    int steps = 2000;
    double learning_rate = 1e-4;
    double init_temperature = 0.07;  ///< exp(τ) starts at 1 / init_temperature
    double clamp_max = 100.0;
    std::uint64_t seed = 0;
    int eval_every = 25;  ///< steps between validation evaluations
    int patience = 8;     ///< evaluations without improvement before stopping
    ProjectionHeadConfig head;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"batch_size", batch_size},       {"grad_accumulation", grad_accumulation},
                {"steps", steps},                 {"learning_rate", learning_rate},
                {"init_temperature", init_temperature}, {"clamp_max", clamp_max},
                {"seed", seed},                   {"eval_every", eval_every},
                {"patience", patience},           {"head", head.to_json()}};
    }

    [[nodiscard]] std::string hash() const { return hex_digest(fnv1a(to_json().dump())); }

    void validate() const {
        if (batch_size < 1 || grad_accumulation < 1 || steps < 0 || eval_every < 1 || patience < 1)
            throw std::invalid_argument("invalid training schedule");
        if (!(learning_rate > 0) || !(init_temperature > 0) || !(clamp_max > 0))
            throw std::invalid_argument("learning rate, temperature and clamp must be positive");
        head.validate();
    }
};

/// Frozen encoder outputs for a set of fonts; column n belongs to font_ids[n].
struct FeatureSet {
    std::vector<std::string> font_ids;
    std::vector<std::string> prompts;
    Eigen::MatrixXf image;  ///< d x N, I_n
    Eigen::MatrixXf tag;    ///< d x N, T_n

    [[nodiscard]] std::size_t size() const { return font_ids.size(); }

    [[nodiscard]] FeatureSet subset(std::span<const std::size_t> idx) const {
        FeatureSet out;
        out.image.resize(image.rows(), static_cast<Eigen::Index>(idx.size()));
        out.tag.resize(tag.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.font_ids.push_back(font_ids[idx[k]]);
            out.prompts.push_back(prompts[idx[k]]);
            out.image.col(static_cast<Eigen::Index>(k)) = image.col(static_cast<Eigen::Index>(idx[k]));
            out.tag.col(static_cast<Eigen::Index>(k)) = tag.col(static_cast<Eigen::Index>(idx[k]));
        }
        return out;
    }
};

/// Runs E_img on the glyph stacks and E_tag on each font's prompt.
inline FeatureSet compute_features(std::span<const FontRecord> records, const ImageEncoder& image_encoder,
                                   const TextEncoderAdapter& text_encoder, const TagVocabulary& vocab,
                                   const PromptOptions& prompt_options = {}) {
    FeatureSet fs;
    const auto n = static_cast<Eigen::Index>(records.size());
    const int d_img = image_encoder.feature_dim();
    const int d_tag = text_encoder.dim();
    fs.image.resize(d_img, n);
    fs.tag.resize(d_tag, n);
    std::vector<const GlyphStack*> stacks;
    for (const auto& r : records) stacks.push_back(&r.glyphs);
    const auto img = image_encoder.encode_all(stacks);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        fs.font_ids.push_back(r.font_id);
        fs.image.col(i) = Eigen::Map<const Eigen::VectorXf>(img[i].values.data(), d_img);
        const auto prompt = build_prompt(r.tags, vocab, prompt_options);
        const auto t = encode_impression(text_encoder, prompt, d_tag);
        fs.tag.col(i) = Eigen::Map<const Eigen::VectorXf>(t.values.data(), d_tag);
        fs.prompts.push_back(prompt.text);
    }
    return fs;
}

/// M_img, M_tag and the temperature.
struct CoembeddingModel {
    nn::ProjectionHead<float> image_head;
    nn::ProjectionHead<float> tag_head;
    Temperature temperature;

    CoembeddingModel() = default;

    CoembeddingModel(const ProjectionHeadConfig& image_cfg, const ProjectionHeadConfig& tag_cfg, std::uint64_t seed)
        : image_head(image_cfg), tag_head(tag_cfg) {
        Rng rng(mix_seed(seed, 20));
        image_head.init(rng);
        tag_head.init(rng);
    }

    [[nodiscard]] Eigen::MatrixXf project_images(const Eigen::MatrixXf& features) const {
        return image_head.forward(features);
    }
    [[nodiscard]] Eigen::MatrixXf project_tags(const Eigen::MatrixXf& features) const {
        return tag_head.forward(features);
    }
};

struct CoembedResult {
    CoembeddingModel model;
    std::vector<double> loss_history;  ///< one entry per optimizer step
    std::vector<double> val_loss;      ///< per-font validation loss, one entry per evaluation
    int best_step = 0;                 ///< optimizer steps behind the returned weights
    int batch_size = 0;                ///< after clipping to the train set
    std::vector<std::string> warnings;
};

/// Reports the SCE loss and accumulates head and temperature gradients for
/// one batch. Returns the loss.
inline double coembed_batch_gradients(CoembeddingModel& model, const Eigen::MatrixXf& image, const Eigen::MatrixXf& tag,
                                      float* dlog_scale) {
    nn::ProjectionHead<float>::Tape ti;
    nn::ProjectionHead<float>::Tape tt;
    const Eigen::MatrixXf li = model.image_head.forward(image, ti);
    const Eigen::MatrixXf lt = model.tag_head.forward(tag, tt);
    const Eigen::MatrixXd s = (li.transpose() * lt).cast<double>();
    const double scale = model.temperature.scale();
    const Eigen::MatrixXd scaled = s * scale;
    const double loss = sce_loss(scaled);
    const Eigen::MatrixXd g = sce_loss_gradient(scaled);
    if (dlog_scale && std::exp(model.temperature.log_scale) < model.temperature.clamp_max)
        *dlog_scale += static_cast<float>((g.array() * s.array()).sum() * scale);
    const Eigen::MatrixXf ds = (g * scale).cast<float>();
    model.image_head.backward(ti, lt * ds.transpose());
    model.tag_head.backward(tt, li * ds);
    return loss;
}

/// SCE loss of the whole set as one batch, divided by its size.
inline double validation_loss(const CoembeddingModel& model, const FeatureSet& val) {
    const Eigen::MatrixXd s =
        (model.project_images(val.image).transpose() * model.project_tags(val.tag)).cast<double>() *
        model.temperature.scale();
    return sce_loss(s) / static_cast<double>(val.size());
}

/// Mean SCE loss over consecutive disjoint batches of the set, the partial
/// tail dropped as in training. This is the training objective evaluated
/// without sampling noise.
inline double mean_batch_loss(const CoembeddingModel& model, const FeatureSet& set, int batch_size) {
    const auto n = static_cast<Eigen::Index>(set.size());
    const Eigen::Index b = std::min<Eigen::Index>(batch_size, n);
    if (b < 1) throw std::invalid_argument("mean_batch_loss needs a non-empty set");
    const Eigen::MatrixXf li = model.project_images(set.image);
    const Eigen::MatrixXf lt = model.project_tags(set.tag);
    double total = 0.0;
    Eigen::Index batches = 0;
    for (Eigen::Index start = 0; start + b <= n; start += b, ++batches)
        total += sce_loss((li.middleCols(start, b).transpose() * lt.middleCols(start, b)).cast<double>() *
                          model.temperature.scale());
    return total / static_cast<double>(batches);
}

/// The model train_heads starts from.
inline CoembeddingModel initial_model(const CoembedConfig& config, int image_dim, int tag_dim) {
    auto head_img = config.head;
    head_img.in_dim = image_dim;
    auto head_tag = config.head;
    head_tag.in_dim = tag_dim;
    CoembeddingModel model(head_img, head_tag, config.seed);
    model.temperature = {std::log(1.0 / config.init_temperature), config.clamp_max};
    model.temperature.clamp();
    return model;
}

/// Contrastive training of the heads on precomputed frozen features. Batches
/// are drawn by epoch-wise shuffling; a partial batch at the end of an epoch
/// is dropped. With a validation set, returns the weights with the lowest
/// validation loss and stops after `patience` evaluations without a new best.
inline CoembedResult train_heads(const FeatureSet& train, const CoembedConfig& config,
                                 const FeatureSet* val = nullptr) {
    config.validate();
    if (train.size() < 2) throw std::invalid_argument("contrastive training needs at least 2 fonts");
    CoembedResult result;
    result.model = initial_model(config, static_cast<int>(train.image.rows()), static_cast<int>(train.tag.rows()));
    auto& model = result.model;

    auto batch = static_cast<std::size_t>(config.batch_size);
    if (batch > train.size()) {
        const std::string msg = "batch size " + std::to_string(batch) + " exceeds the " +
                                std::to_string(train.size()) + " training fonts; clipped";
        log::warn(msg);
        result.warnings.push_back(msg);
        batch = train.size();
    }
    result.batch_size = static_cast<int>(batch);

    nn::Param<float> tau(1, 1);
    tau.value(0, 0) = static_cast<float>(model.temperature.log_scale);
    auto params = model.image_head.parameters();
    for (auto* p : model.tag_head.parameters()) params.push_back(p);
    params.push_back(&tau);
    nn::Adam<float> adam(params, {.learning_rate = config.learning_rate});

    Rng rng(mix_seed(config.seed, 21));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    Eigen::MatrixXf xi(train.image.rows(), static_cast<Eigen::Index>(batch));
    Eigen::MatrixXf xt(train.tag.rows(), static_cast<Eigen::Index>(batch));

    if (val && val->size() < 2) throw std::invalid_argument("validation needs at least 2 fonts");
    CoembeddingModel best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const auto evaluate = [&](int steps_done) {
        const double v = validation_loss(model, *val);
        result.val_loss.push_back(v);
        if (v < best_val) {
            best_val = v;
            best = model;
            result.best_step = steps_done;
            since_best = 0;
        } else {
            ++since_best;
        }
    };
    if (val) evaluate(0);

    for (int step = 0; step < config.steps; ++step) {
        adam.zero_grad();
        double loss = 0.0;
        for (int micro = 0; micro < config.grad_accumulation; ++micro) {
            if (cursor + batch > order.size()) {
                shuffle(order, rng);
                cursor = 0;
            }
            for (std::size_t k = 0; k < batch; ++k) {
                xi.col(static_cast<Eigen::Index>(k)) = train.image.col(static_cast<Eigen::Index>(order[cursor + k]));
                xt.col(static_cast<Eigen::Index>(k)) = train.tag.col(static_cast<Eigen::Index>(order[cursor + k]));
            }
            cursor += batch;
            try {
                loss += coembed_batch_gradients(model, xi, xt, tau.grad.data());
            } catch (const std::domain_error&) {
                loss = std::numeric_limits<double>::quiet_NaN();
            }
            if (!std::isfinite(loss))
                throw DivergenceError("contrastive loss became non-finite at step " + std::to_string(step + 1));
        }
        adam.step();
        model.temperature.log_scale = tau.value(0, 0);
        model.temperature.clamp();
        tau.value(0, 0) = static_cast<float>(model.temperature.log_scale);
        result.loss_history.push_back(loss / config.grad_accumulation);
        if (val && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps)) {
            evaluate(step + 1);
            if (since_best >= config.patience) {
                log::info("early stopping at step " + std::to_string(step + 1) + ", best step " +
                          std::to_string(result.best_step));
                break;
            }
        }
    }
    if (val) {
        result.model = std::move(best);
    } else {
        result.best_step = static_cast<int>(result.loss_history.size());
    }
    return result;
}

struct CoembedRun {
    CoembedResult result;
    FeatureSet features;
    std::uint64_t encoder_checksum_before = 0;
    std::uint64_t encoder_checksum_after = 0;
};

/// Full pipeline: frozen features, then head training (early-stopped when
/// validation records are given). Throws if the image encoder's weights
/// change during the run.
inline CoembedRun train_coembedding(std::span<const FontRecord> records, const ImageEncoder& image_encoder,
                                    const TextEncoderAdapter& text_encoder, const TagVocabulary& vocab,
                                    const CoembedConfig& config, std::span<const FontRecord> val_records = {}) {
    CoembedRun run;
    run.encoder_checksum_before = image_encoder.checksum();
    run.features = compute_features(records, image_encoder, text_encoder, vocab);
    FeatureSet val;
    if (!val_records.empty()) val = compute_features(val_records, image_encoder, text_encoder, vocab);
    run.result = train_heads(run.features, config, val_records.empty() ? nullptr : &val);
    run.encoder_checksum_after = image_encoder.checksum();
    if (run.encoder_checksum_after != run.encoder_checksum_before)
        throw std::logic_error("image encoder weights changed during contrastive training");
    return run;
}

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointMagic = "FCCOEMB";

inline void save_checkpoint(const std::filesystem::path& path, CoembeddingModel& model, long step,
                            const CoembedConfig& config, const nlohmann::json& extra = nlohmann::json::object()) {
    ByteWriter w;
    std::size_t ni = 0;
    std::size_t nt = 0;
    detail::append_params(w, model.image_head.parameters(), ni);
    detail::append_params(w, model.tag_head.parameters(), nt);
    nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                             {"image_head", model.image_head.config().to_json()},
                             {"tag_head", model.tag_head.config().to_json()},
                             {"log_temperature_scale", model.temperature.log_scale},
                             {"temperature_clamp_max", model.temperature.clamp_max},
                             {"step", step},
                             {"config", config.to_json()},
                             {"config_hash", config.hash()},
                             {"image_head_params", ni},
                             {"tag_head_params", nt},
                             {"extra", extra}};
    write_file_bytes(path, pack_container(kCheckpointMagic, header, w.bytes()));
}

struct Checkpoint {
    CoembeddingModel model;
    nlohmann::json header;
    std::string file_hash;  ///< FNV-1a of the file bytes
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const auto container = unpack_container(bytes, kCheckpointMagic);
    const auto& h = container.header;
    const int version = h.value("format_version", -1);
    if (version != kCheckpointFormatVersion)
        throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported");
    Checkpoint ck;
    ck.model.image_head = nn::ProjectionHead<float>(ProjectionHeadConfig::from_json(h.at("image_head")));
    ck.model.tag_head = nn::ProjectionHead<float>(ProjectionHeadConfig::from_json(h.at("tag_head")));
    ck.model.temperature = {h.at("log_temperature_scale").get<double>(), h.at("temperature_clamp_max").get<double>()};
    const auto pi = ck.model.image_head.parameters();
    const auto pt = ck.model.tag_head.parameters();
    if (container.payload.size() != 4 * (detail::param_count(pi) + detail::param_count(pt)))
        throw FormatError("checkpoint payload does not match the head architecture");
    ByteReader r(container.payload);
    detail::read_params(r, pi);
    detail::read_params(r, pt);
    ck.header = h;
    ck.file_hash = hex_digest(Fnv1a{}.update(bytes.data(), bytes.size()).digest());
    return ck;
}

}  // namespace fontclip
