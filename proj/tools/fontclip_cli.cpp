#include <fontclip/autoencoder/weights_io.hpp>
#include <fontclip/dataset/amt.hpp>
#include <fontclip/dataset/synthetic.hpp>
#include <fontclip/eval/evaluate.hpp>
#include <fontclip/pipeline/artifacts.hpp>
#include <fontclip/pipeline/desk_run.hpp>
#include <fontclip/retrieval/build.hpp>
#include <fontclip/service/service.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace fontclip;
namespace fs = std::filesystem;

namespace {

struct DatasetFlags {
    std::int64_t min_occurrences = 50;
    std::size_t max_tags = 10;
    std::string allowlist;

    void add(CLI::App* cmd) {
        cmd->add_option("--min-occurrences", min_occurrences, "Drop tags used by fewer fonts")->capture_default_str();
        cmd->add_option("--max-tags", max_tags, "Tags kept per font")->capture_default_str();
        cmd->add_option("--allowlist", allowlist, "Tag allowlist file (default: <corpus>/allowlist.txt if present)");
    }

    [[nodiscard]] DatasetConfig config() const {
        DatasetConfig c;
        c.min_occurrences = min_occurrences;
        c.max_tags = max_tags;
        if (!allowlist.empty()) c.allowlist = fs::absolute(allowlist).string();
        return c;
    }
};

fs::path split_path_for(const std::string& flag, const fs::path& corpus) {
    return flag.empty() ? corpus / "split.json" : fs::path(flag);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<const FontRecord*> select_part(const PreparedCorpus& corpus, const DatasetSplit& split, const std::string& part) {
    if (part == "all") {
        std::vector<const FontRecord*> out;
        for (const auto& r : corpus.records) out.push_back(&r);
        return out;
    }
    if (part == "train") return corpus.part(split.train);
    if (part == "val") return corpus.part(split.val);
    if (part == "test") return corpus.part(split.test);
    throw std::invalid_argument("unknown split part '" + part + "'");
}

/// Text encoder as recorded in a checkpoint, so later stages embed prompts alike.
nlohmann::json recorded_text_encoder(const Checkpoint& ck) {
    if (ck.header.contains("extra") && ck.header.at("extra").contains("text_encoder"))
        return ck.header.at("extra").at("text_encoder");
    throw std::runtime_error("checkpoint does not record its text encoder; retrain with this CLI");
}

DatasetConfig recorded_dataset(const Checkpoint& ck, const DatasetConfig& fallback) {
    if (ck.header.contains("extra") && ck.header.at("extra").contains("dataset"))
        return DatasetConfig::from_json(ck.header.at("extra").at("dataset"));
    return fallback;
}

void check_corpus(const Checkpoint& ck, const PreparedCorpus& corpus) {
    if (ck.header.contains("extra") && ck.header.at("extra").contains("corpus_hash") &&
        ck.header.at("extra").at("corpus_hash").get<std::string>() != corpus.corpus_hash)
        throw std::runtime_error("corpus hash " + corpus.corpus_hash + " differs from the training corpus " +
                                 ck.header.at("extra").at("corpus_hash").get<std::string>());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Impression-tag and font-image co-embedding toolkit"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

    // generate-synthetic
    auto* gen = app.add_subcommand("generate-synthetic", "Write a synthetic corpus with known tag ground truth");
    std::string gen_out;
    SyntheticCorpusOptions gen_opts;
    gen->add_option("--out", gen_out, "Output corpus directory")->required();
    gen->add_option("--fonts", gen_opts.n_fonts, "Number of fonts")->capture_default_str();
    gen->add_option("--seed", gen_opts.seed, "Seed")->capture_default_str();
    gen->add_option("--drop", gen_opts.noise.drop, "Per-tag drop probability")->capture_default_str();
    gen->add_option("--swap", gen_opts.noise.swap, "Per-tag swap probability")->capture_default_str();
    gen->add_option("--amt-groups", gen_opts.amt_groups, "AMT-style triplets to write (0 = none)")->capture_default_str();

    // pretrain-autoencoder
    auto* pre = app.add_subcommand("pretrain-autoencoder", "Train the glyph autoencoder and save its encoder");
    std::string pre_corpus, pre_out, pre_split;
    auto pre_cfg = desk_autoencoder_config();
    DatasetFlags pre_data;
    pre->add_option("--corpus", pre_corpus, "Corpus directory")->required();
    pre->add_option("--out", pre_out, "Encoder weights file")->required();
    pre->add_option("--split", pre_split, "Split file, created when missing (default: <corpus>/split.json)");
    pre->add_option("--epochs", pre_cfg.epochs, "Epochs")->capture_default_str();
    pre->add_option("--seed", pre_cfg.seed, "Seed")->capture_default_str();
    pre->add_option("--width", pre_cfg.base_width, "Channels of the first stage")->capture_default_str();
    pre->add_option("--lr", pre_cfg.learning_rate, "Adam learning rate")->capture_default_str();
    pre->add_option("--batch", pre_cfg.batch_size, "Batch size")->capture_default_str();
    pre->add_option("--patience", pre_cfg.patience, "Epochs without validation gain before stopping")->capture_default_str();
    pre_data.add(pre);

    // train
    auto* train = app.add_subcommand("train", "Train the projection heads with the contrastive loss");
    std::string tr_corpus, tr_encoder, tr_out, tr_split, tr_text = "stub", tr_cache;
    std::uint64_t tr_text_seed = 7;
    CoembedConfig tr_cfg;
    DatasetFlags tr_data;
    train->add_option("--corpus", tr_corpus, "Corpus directory")->required();
    train->add_option("--encoder", tr_encoder, "Pretrained encoder weights")->required();
    train->add_option("--out", tr_out, "Checkpoint file")->required();
    train->add_option("--split", tr_split, "Split file, created when missing (default: <corpus>/split.json)");
    train->add_option("--steps", tr_cfg.steps, "Maximum optimizer steps")->capture_default_str();
    train->add_option("--batch", tr_cfg.batch_size, "Batch size")->capture_default_str();
    train->add_option("--accumulate", tr_cfg.grad_accumulation, "Micro-batches per step")->capture_default_str();
    train->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate")->capture_default_str();
    train->add_option("--seed", tr_cfg.seed, "Seed")->capture_default_str();
    train->add_option("--eval-every", tr_cfg.eval_every, "Steps between validation checks")->capture_default_str();
    train->add_option("--patience", tr_cfg.patience, "Validation checks without gain before stopping")->capture_default_str();
    train->add_option("--text-encoder", tr_text, "stub or external")->check(CLI::IsMember({"stub", "external"}))->capture_default_str();
    train->add_option("--text-seed", tr_text_seed, "Stub text encoder seed")->capture_default_str();
    train->add_option("--text-cache", tr_cache, "Embedding cache (.jsonl) for the external encoder");
    tr_data.add(train);

    // build-index
    auto* build = app.add_subcommand("build-index", "Project fonts and write a retrieval index");
    std::string bi_corpus, bi_encoder, bi_ckpt, bi_out, bi_split, bi_part = "test";
    build->add_option("--corpus", bi_corpus, "Corpus directory")->required();
    build->add_option("--encoder", bi_encoder, "Encoder weights")->required();
    build->add_option("--checkpoint", bi_ckpt, "Trained checkpoint")->required();
    build->add_option("--out", bi_out, "Index file")->required();
    build->add_option("--split", bi_split, "Split file (default: <corpus>/split.json)");
    build->add_option("--part", bi_part, "Fonts to index")->check(CLI::IsMember({"all", "train", "val", "test"}))->capture_default_str();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Compute ARR, mAP, AMT accuracy and rank-pair structure");
    std::string ev_index, ev_corpus, ev_encoder, ev_ckpt, ev_amt, ev_out;
    int ev_bins = 50;
    ev->add_option("--index", ev_index, "Index to evaluate")->required();
    ev->add_option("--corpus", ev_corpus, "Corpus directory")->required();
    ev->add_option("--encoder", ev_encoder, "Encoder weights (enables before/after comparisons and AMT)")->required();
    ev->add_option("--checkpoint", ev_ckpt, "Trained checkpoint")->required();
    ev->add_option("--amt", ev_amt, "AMT groups (JSON lines)");
    ev->add_option("--out", ev_out, "Output directory")->required();
    ev->add_option("--bins", ev_bins, "Histogram bins")->capture_default_str();

    // prompts
    auto* pr = app.add_subcommand("prompts", "List the prompts an external text encoder must embed");
    std::string pr_corpus, pr_out;
    DatasetFlags pr_data;
    pr->add_option("--corpus", pr_corpus, "Corpus directory")->required();
    pr->add_option("--out", pr_out, "Output file (JSON lines of font_id and prompt)")->required();
    pr_data.add(pr);

    // serve
    auto* srv = app.add_subcommand("serve", "Serve retrieval over HTTP");
    std::string srv_config, srv_host;
    int srv_port = -1;
    srv->add_option("--config", srv_config, "Config file (JSON; FONTCLIP_<SECTION>__<KEY> env vars override)")->required();
    srv->add_option("--host", srv_host, "Bind address (overrides the config)");
    srv->add_option("--port", srv_port, "Port (overrides the config)");

    CLI11_PARSE(app, argc, argv);
    if (quiet) log::set_quiet(true);

    try {
        if (*gen) {
            const auto fonts = generate_synthetic_corpus(gen_out, gen_opts);
            log::info("wrote " + std::to_string(fonts.size()) + " fonts to " + gen_out);
        } else if (*pre) {
            const auto corpus = prepare_corpus(pre_corpus, pre_data.config());
            const auto split = ensure_split(split_path_for(pre_split, pre_corpus), corpus, pre_cfg.seed);
            std::vector<const GlyphStack*> tr, va;
            for (const auto* r : corpus.part(split.train)) tr.push_back(&r->glyphs);
            for (const auto* r : corpus.part(split.val)) va.push_back(&r->glyphs);
            log::info("pretraining on " + std::to_string(tr.size()) + " fonts, validating on " + std::to_string(va.size()));
            auto result = pretrain_autoencoder(tr, pre_cfg, va);
            save_encoder(pre_out, ImageEncoder(result.model.encoder));
            nlohmann::json log_json = {{"train_loss", result.train_loss},
                                       {"val_loss", result.val_loss},
                                       {"best_epoch", result.best_epoch},
                                       {"corpus_hash", corpus.corpus_hash}};
            write_json(fs::path(pre_out).string() + ".json", log_json);
            log::info("saved encoder to " + pre_out);
        } else if (*train) {
            nlohmann::json text_cfg = {{"type", tr_text}};
            if (tr_text == "stub") text_cfg["seed"] = tr_text_seed;
            else text_cfg["cache_path"] = fs::absolute(tr_cache).string();
            const auto text = make_text_encoder(text_cfg);
            const auto dataset = tr_data.config();
            const auto corpus = prepare_corpus(tr_corpus, dataset);
            const auto split = ensure_split(split_path_for(tr_split, tr_corpus), corpus, tr_cfg.seed);
            const auto encoder = load_encoder(tr_encoder);
            const auto tr_records = copy_records(corpus.part(split.train));
            const auto va_records = copy_records(corpus.part(split.val));
            auto run = train_coembedding(tr_records, encoder, *text, corpus.vocabulary, tr_cfg, va_records);
            auto extra = checkpoint_provenance(corpus, tr_encoder, text_cfg, dataset);
            extra["best_step"] = run.result.best_step;
            extra["steps_run"] = run.result.loss_history.size();
            save_checkpoint(tr_out, run.result.model, run.result.best_step, tr_cfg, extra);
            write_json(fs::path(tr_out).string() + ".json",
                       {{"loss_history", run.result.loss_history},
                        {"val_loss", run.result.val_loss},
                        {"best_step", run.result.best_step},
                        {"encoder_checksum_before", hex_digest(run.encoder_checksum_before)},
                        {"encoder_checksum_after", hex_digest(run.encoder_checksum_after)}});
            log::info("saved checkpoint to " + tr_out + " (best step " + std::to_string(run.result.best_step) + ")");
        } else if (*build) {
            const auto ck = load_checkpoint(bi_ckpt);
            const auto dataset = recorded_dataset(ck, {});
            const auto corpus = prepare_corpus(bi_corpus, dataset);
            check_corpus(ck, corpus);
            const auto split_file = split_path_for(bi_split, bi_corpus);
            if (bi_part != "all" && !fs::exists(split_file))
                throw std::runtime_error("no split at " + split_file.string() + "; run train first or pass --split");
            const auto split = bi_part == "all" ? DatasetSplit{} : ensure_split(split_file, corpus, 0);
            const auto text = make_text_encoder(recorded_text_encoder(ck));
            const auto encoder = load_encoder(bi_encoder);
            const auto records = copy_records(select_part(corpus, split, bi_part));
            const auto features = compute_features(records, encoder, *text, corpus.vocabulary);
            const auto meta = index_provenance(corpus, bi_ckpt, bi_encoder, dataset, bi_part);
            const auto index = build_index(ck.model, features, meta);
            save_index(bi_out, index);
            log::info("indexed " + std::to_string(index.size()) + " fonts to " + bi_out);
        } else if (*ev) {
            const auto index = load_index(ev_index);
            const auto ck = load_checkpoint(ev_ckpt);
            if (index.metadata().value("checkpoint_hash", std::string{}) != ck.file_hash)
                throw std::runtime_error("index was not built from checkpoint " + ev_ckpt);
            const auto corpus = prepare_corpus(ev_corpus, recorded_dataset(ck, {}));
            if (index.metadata().value("corpus_hash", std::string{}) != corpus.corpus_hash)
                throw std::runtime_error("index was not built from corpus " + ev_corpus);
            const auto text = make_text_encoder(recorded_text_encoder(ck));
            const auto encoder = load_encoder(ev_encoder);
            const auto by_id = corpus.by_id();
            std::vector<FontRecord> indexed;
            for (const auto& id : index.font_ids()) indexed.push_back(*by_id.at(id));
            const auto raw = compute_features(indexed, encoder, *text, corpus.vocabulary);

            EvalInputs in;
            in.index = &index;
            in.raw_features = &raw;
            in.font_tags = font_tag_map(indexed);
            for (const auto& [tag, n] : corpus.vocabulary.counts()) in.vocabulary.push_back(tag);
            in.latent_of = single_tag_latents(corpus.vocabulary, *text, ck.model.tag_head);
            in.histogram_bins = ev_bins;
            auto out = evaluate(in);

            if (!ev_amt.empty()) {
                std::vector<FontMeta> metas;
                for (const auto& r : corpus.records) metas.push_back({r.font_id, r.tags});
                const auto groups = load_amt_groups(ev_amt, metas);
                const auto all = build_index(ck.model, compute_features(corpus.records, encoder, *text, corpus.vocabulary));
                const auto amt = amt_evaluation(all, groups.groups, in.latent_of);
                out.report.amt_accuracy = amt.accuracy;
                out.report.amt_arr = amt.arr;
                out.report.amt_groups = amt.evaluated;
                out.warnings.insert(out.warnings.end(), groups.warnings.begin(), groups.warnings.end());
                out.warnings.insert(out.warnings.end(), amt.warnings.begin(), amt.warnings.end());
            }
            out.report.hashes = {{"index_hash", index.content_hash()},
                                 {"corpus_hash", corpus.corpus_hash},
                                 {"checkpoint_hash", ck.file_hash}};
            out.report.validate();
            fs::create_directories(ev_out);
            auto report = out.report.to_json();
            report["warnings"] = out.warnings;
            write_json(fs::path(ev_out) / "report.json", report);
            write_histogram_csv(fs::path(ev_out) / "rank_pairs_after.csv", out.histogram_after);
            write_histogram_png(fs::path(ev_out) / "rank_pairs_after.png", out.histogram_after);
            if (out.histogram_before) {
                write_histogram_csv(fs::path(ev_out) / "rank_pairs_before.csv", *out.histogram_before);
                write_histogram_png(fs::path(ev_out) / "rank_pairs_before.png", *out.histogram_before);
            }
            std::cout << report.dump(2) << '\n';
        } else if (*pr) {
            const auto corpus = prepare_corpus(pr_corpus, pr_data.config());
            std::ofstream out(pr_out, std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + pr_out);
            std::size_t n = 0;
            for (const auto& r : corpus.records) {
                if (r.tags.empty()) continue;
                out << nlohmann::json{{"font_id", r.font_id}, {"prompt", build_prompt(r.tags, corpus.vocabulary).text}}.dump() << '\n';
                ++n;
            }
            // Single-tag prompts serve tag queries and AMT scoring.
            for (const auto& tag : corpus.vocabulary.by_frequency()) {
                out << nlohmann::json{{"font_id", ""}, {"prompt", build_prompt(std::vector{tag}, corpus.vocabulary).text}}.dump() << '\n';
                ++n;
            }
            log::info("wrote " + std::to_string(n) + " prompts to " + pr_out);
        } else if (*srv) {
            auto config = load_service_config(srv_config);
            if (!srv_host.empty()) config.host = srv_host;
            if (srv_port >= 0) config.port = srv_port;
            RetrievalService service(config);
            service.serve();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
