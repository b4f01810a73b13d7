#pragma once

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "../autoencoder/pretrain.hpp"
#include "../coembed/trainer.hpp"
#include "../dataset/preprocess.hpp"
#include "../dataset/split.hpp"
#include "../dataset/synthetic.hpp"
#include "../eval/evaluate.hpp"
#include "../retrieval/build.hpp"
#include "artifacts.hpp"

namespace fontclip {

/// An in-memory synthetic corpus, tag-filtered and split.
struct DeskCorpus {
    std::vector<SyntheticFont> fonts;
    std::vector<FontRecord> records;
    TagVocabulary vocabulary;
    DatasetSplit split;
    std::vector<AmtGroup> amt_groups;

    [[nodiscard]] std::vector<const FontRecord*> part(const std::vector<std::string>& ids) const {
        std::map<std::string, const FontRecord*> by_id;
        for (const auto& r : records) by_id[r.font_id] = &r;
        std::vector<const FontRecord*> out;
        for (const auto& id : ids)
            if (const auto it = by_id.find(id); it != by_id.end()) out.push_back(it->second);
        return out;
    }
};

struct DeskCorpusConfig {
    std::size_t n_fonts = 500;
    std::uint64_t seed = 0;
    SyntheticNoiseConfig noise;
    std::size_t amt_groups = 200;
    double amt_margin = 0.5;
    bool amt_from_test_split = false;  ///< false: groups span the whole corpus
    TagFilterConfig filter;
    SplitFractions fractions;
};

inline DeskCorpus make_desk_corpus(const DeskCorpusConfig& cfg) {
    DeskCorpus c;
    c.fonts = synthesize_fonts(cfg.n_fonts, cfg.seed, cfg.noise);
    std::vector<FontRecord> raw;
    raw.reserve(c.fonts.size());
    for (const auto& f : c.fonts) raw.push_back({f.font_id, render_font(f.attributes), f.tags});
    const auto counts = TagVocabulary::from_tag_lists([&] {
        std::vector<std::vector<std::string>> t;
        for (const auto& r : raw) t.push_back(r.tags);
        return t;
    }());
    auto pre = preprocess_tags(std::move(raw), counts, cfg.filter);
    c.records = std::move(pre.records);
    c.vocabulary = std::move(pre.vocabulary);
    c.split = make_split(c.records, cfg.fractions, mix_seed(cfg.seed, 30));
    // Groups are sampled from the post-filter tags of the kept fonts.
    std::vector<SyntheticFont> pool;
    const std::set<std::string> test(c.split.test.begin(), c.split.test.end());
    std::map<std::string, const FontRecord*> kept;
    for (const auto& r : c.records) kept[r.font_id] = &r;
    for (const auto& f : c.fonts) {
        const auto it = kept.find(f.font_id);
        if (it == kept.end() || (cfg.amt_from_test_split && !test.contains(f.font_id))) continue;
        SyntheticFont g = f;
        g.tags = it->second->tags;
        pool.push_back(std::move(g));
    }
    c.amt_groups = make_synthetic_amt_groups(pool, cfg.amt_groups, mix_seed(cfg.seed, 31), cfg.amt_margin);
    return c;
}

/// Autoencoder settings that fit a desk-scale run on one CPU core.
inline AutoencoderConfig desk_autoencoder_config(std::uint64_t seed = 0) {
    AutoencoderConfig c;
    c.base_width = 16;
    c.learning_rate = 1e-3;
    c.batch_size = 8;
    c.epochs = 30;
    c.seed = seed;
    return c;
}

/// Pretrains on the train split's glyphs, early-stopped on the val split.
inline PretrainResult pretrain_desk_autoencoder(const DeskCorpus& corpus, const AutoencoderConfig& config) {
    const auto stacks = [](const std::vector<const FontRecord*>& rs) {
        std::vector<const GlyphStack*> out;
        out.reserve(rs.size());
        for (const auto* r : rs) out.push_back(&r->glyphs);
        return out;
    };
    const auto train = stacks(corpus.part(corpus.split.train));
    const auto val = stacks(corpus.part(corpus.split.val));
    return pretrain_autoencoder(train, config, val);
}

inline std::map<std::string, std::vector<std::string>> font_tag_map(const std::vector<FontRecord>& records) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& r : records) out[r.font_id] = r.tags;
    return out;
}

struct DeskRunResult {
    CoembedResult training;
    double train_loss_initial = 0.0;  ///< mean_batch_loss on the train split
    double train_loss_final = 0.0;
    EvalOutputs eval;
    std::uint64_t encoder_checksum_before = 0;
    std::uint64_t encoder_checksum_after = 0;
    double seconds = 0.0;
};

/// Co-embedding training on the train split (early-stopped on val) with a
/// frozen, already pretrained image encoder. Retrieval and structure metrics
/// use the test split; AMT groups are scored against latents of every font.
inline DeskRunResult desk_run(const DeskCorpus& corpus, const ImageEncoder& encoder, const TextEncoderAdapter& text,
                              const CoembedConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    DeskRunResult out;
    const auto train = copy_records(corpus.part(corpus.split.train));
    const auto val = copy_records(corpus.part(corpus.split.val));
    const auto test = copy_records(corpus.part(corpus.split.test));
    auto run = train_coembedding(train, encoder, text, corpus.vocabulary, config, val);
    out.encoder_checksum_before = run.encoder_checksum_before;
    out.encoder_checksum_after = run.encoder_checksum_after;
    out.training = std::move(run.result);
    const auto& tf = run.features;
    const int batch = out.training.batch_size;
    out.train_loss_initial = mean_batch_loss(
        initial_model(config, static_cast<int>(tf.image.rows()), static_cast<int>(tf.tag.rows())), tf, batch);
    out.train_loss_final = mean_batch_loss(out.training.model, tf, batch);

    const auto test_features = compute_features(test, encoder, text, corpus.vocabulary);
    const auto index = build_index(out.training.model, test_features);
    EvalInputs in;
    in.index = &index;
    in.raw_features = &test_features;
    in.font_tags = font_tag_map(test);
    for (const auto& [tag, n] : corpus.vocabulary.counts()) in.vocabulary.push_back(tag);
    in.latent_of = single_tag_latents(corpus.vocabulary, text, out.training.model.tag_head);
    out.eval = evaluate(in);

    const auto all_index = build_index(out.training.model, compute_features(corpus.records, encoder, text, corpus.vocabulary));
    const auto amt = amt_evaluation(all_index, corpus.amt_groups, in.latent_of);
    out.eval.report.amt_accuracy = amt.accuracy;
    out.eval.report.amt_arr = amt.arr;
    out.eval.report.amt_groups = amt.evaluated;
    out.eval.warnings.insert(out.eval.warnings.end(), amt.warnings.begin(), amt.warnings.end());
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace fontclip
