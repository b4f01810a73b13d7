#include <gtest/gtest.h>

#include <fontclip/dataset/synthetic.hpp>
#include <fontclip/eval/metrics.hpp>
#include <fontclip/pipeline/desk_run.hpp>
#include <fontclip/retrieval/build.hpp>
#include <fontclip/service/service.hpp>

#include <atomic>
#include <fstream>
#include <thread>

#include "test_support.hpp"

using namespace fontclip;
using fontclip::testing::TempDir;
using nlohmann::json;

namespace {

const json kText = {{"type", "stub"}, {"seed", 7}};

/// Corpus, random-init encoder, trained heads, index and config on disk.
struct Artifacts {
    std::filesystem::path root;
    std::filesystem::path corpus;
    std::vector<SyntheticFont> fonts;
    DatasetSplit split;
    json config;

    [[nodiscard]] ServiceConfig service_config() const { return ServiceConfig::from_json(config, root); }
};

Artifacts make_artifacts(const std::filesystem::path& root, std::size_t n_fonts, std::uint64_t seed, int steps,
                         const std::string& part = "test") {
    Artifacts a;
    a.root = root;
    a.corpus = root / "corpus";
    SyntheticCorpusOptions options;
    options.n_fonts = n_fonts;
    options.seed = seed;
    a.fonts = generate_synthetic_corpus(a.corpus, options);
    DatasetConfig dataset;
    dataset.min_occurrences = 10;
    const auto corpus = prepare_corpus(a.corpus, dataset);
    a.split = make_split(corpus.records, {}, seed);

    AutoencoderConfig ac;
    ac.base_width = 4;
    ac.seed = seed;
    save_encoder(root / "enc.bin", ImageEncoder(GlyphAutoencoder<float>(ac).encoder));
    const auto encoder = load_encoder(root / "enc.bin");
    const StubTextEncoder text(7);
    CoembedConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 64;
    cfg.seed = seed;
    auto run = train_coembedding(copy_records(corpus.part(a.split.train)), encoder, text, corpus.vocabulary, cfg,
                                 copy_records(corpus.part(a.split.val)));
    save_checkpoint(root / "ck.bin", run.result.model, run.result.best_step, cfg,
                    checkpoint_provenance(corpus, root / "enc.bin", kText, dataset));

    std::vector<const FontRecord*> indexed = corpus.part(a.split.test);
    if (part == "all") {
        indexed.clear();
        for (const auto& r : corpus.records) indexed.push_back(&r);
    }
    const auto features = compute_features(copy_records(indexed), encoder, text, corpus.vocabulary);
    save_index(root / "index.bin",
               build_index(run.result.model, features,
                           index_provenance(corpus, root / "ck.bin", root / "enc.bin", dataset, part)));
    a.config = {{"service",
                 {{"index_path", "index.bin"},
                  {"corpus_path", "corpus"},
                  {"checkpoint_path", "ck.bin"},
                  {"encoder_path", "enc.bin"},
                  {"max_k", 100}}},
                {"text_encoder", kText}};
    return a;
}

json post(const RetrievalService& s, const std::string& path, const json& body, int expect_status = 200) {
    const auto r = s.handle({"POST", path, body.dump()});
    EXPECT_EQ(r.status, expect_status) << path << " " << body.dump() << " -> " << r.body;
    return json::parse(r.body);
}

json get(const RetrievalService& s, const std::string& path, int expect_status = 200) {
    const auto r = s.handle({"GET", path, ""});
    EXPECT_EQ(r.status, expect_status) << path << " -> " << r.body;
    return json::parse(r.body);
}

std::string base64(const std::vector<std::uint8_t>& bytes) {
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

json upload_of(const FontRecord& r) {
    json glyphs = json::array();
    for (int c = 0; c < kLetterCount; ++c) glyphs.push_back(base64(encode_png(glyph_to_image(r.glyphs.channel(c)))));
    return glyphs;
}

class Service : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        log::set_quiet(true);
        dir_ = new TempDir("fontclip-service");
        art_ = new Artifacts(make_artifacts(dir_->path(), 300, 3, 600));
        service_ = new RetrievalService(art_->service_config());
    }
    static void TearDownTestSuite() {
        delete service_;
        delete art_;
        delete dir_;
    }

    static const RetrievalService& svc() { return *service_; }
    static const Artifacts& art() { return *art_; }
    static const ServiceSnapshot& snap() { return *service_->snapshot(); }

    static TempDir* dir_;
    static Artifacts* art_;
    static RetrievalService* service_;
};

TempDir* Service::dir_ = nullptr;
Artifacts* Service::art_ = nullptr;
RetrievalService* Service::service_ = nullptr;

}  // namespace

TEST_F(Service, HealthReportsSizeAndHashes) {
    const auto h = get(svc(), "/v1/health");
    EXPECT_EQ(h["status"], "ok");
    EXPECT_EQ(h["index_size"], art().split.test.size());
    EXPECT_EQ(h["index_hash"], snap().index.content_hash());
    EXPECT_EQ(h["corpus_hash"], corpus_hash(art().corpus));
    EXPECT_EQ(h["checkpoint_hash"], file_hash(art().root / "ck.bin"));
    EXPECT_EQ(h["config_hash"], art().service_config().hash());
    EXPECT_EQ(h["max_k"], art().split.test.size());
    EXPECT_TRUE(h["glyph_upload"].get<bool>());
}

TEST_F(Service, EveryResponseCarriesTheIndexHash) {
    const std::string hash = snap().index.content_hash();
    const std::string id = art().split.test.front();
    for (const auto& r : {svc().handle({"GET", "/v1/tags", ""}), svc().handle({"GET", "/v1/fonts/" + id, ""}),
                          svc().handle({"GET", "/v1/fonts/" + id + "/glyphs/Q.png", ""}),
                          svc().handle({"GET", "/v1/nowhere", ""}), svc().handle({"POST", "/v1/retrieve/by-tags", "{"}),
                          svc().handle({"DELETE", "/v1/tags", ""})}) {
        EXPECT_EQ(r.index_hash, hash);
        if (r.content_type == "application/json") {
            EXPECT_EQ(json::parse(r.body)["index_hash"], hash);
        }
    }
}

TEST_F(Service, TagsListVocabularyByFrequency) {
    const auto t = get(svc(), "/v1/tags");
    const auto& order = snap().corpus.vocabulary.by_frequency();
    ASSERT_EQ(t["tags"].size(), order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        EXPECT_EQ(t["tags"][i]["tag"], order[i]);
        EXPECT_EQ(t["tags"][i]["count"], snap().corpus.vocabulary.count(order[i]));
    }
}

TEST_F(Service, FontMetadataAndGlyphPng) {
    const std::string id = art().split.test.front();
    const auto f = get(svc(), "/v1/fonts/" + id);
    EXPECT_EQ(f["tags"], snap().fonts.at(id)->tags);
    EXPECT_TRUE(f["in_index"].get<bool>());
    ASSERT_EQ(f["glyphs"].size(), 26u);
    EXPECT_EQ(f["glyphs"]["R"], "/v1/fonts/" + id + "/glyphs/R.png");

    const auto png = svc().handle({"GET", "/v1/fonts/" + id + "/glyphs/R.png", ""});
    ASSERT_EQ(png.status, 200);
    EXPECT_EQ(png.content_type, "image/png");
    const auto img = decode_png(std::vector<std::uint8_t>(png.body.begin(), png.body.end()));
    const auto on_disk = decode_png(read_file_bytes(glyph_path(art().corpus, id, 'R' - 'A')));
    EXPECT_EQ(img.pixels, on_disk.pixels);

    EXPECT_EQ(get(svc(), "/v1/fonts/nope", 404)["error"]["code"], "unknown_font");
    EXPECT_EQ(get(svc(), "/v1/fonts/" + id + "/glyphs/a.png", 404)["error"]["code"], "unknown_letter");
    EXPECT_EQ(get(svc(), "/v1/fonts/" + id + "/glyphs/AB.png", 404)["error"]["code"], "unknown_letter");
}

TEST_F(Service, SerifQueryReturnsFiveRankedFontsWithPreviews) {
    const auto r = post(svc(), "/v1/retrieve/by-tags", {{"tags", {"serif"}}, {"k", 5}});
    EXPECT_EQ(r["prompt"], "First impression is serif.");
    ASSERT_EQ(r["results"].size(), 5u);
    const auto tl = tag_latent(std::vector<std::string>{"serif"}, snap().corpus.vocabulary, *snap().text_encoder,
                               snap().model.tag_head);
    const auto want = snap().index.query_by_tag_latent(tl.latent, 5);
    int serif = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& e = r["results"][i];
        EXPECT_EQ(e["rank"], i + 1);
        EXPECT_EQ(e["font_id"], want[i].font_id);
        EXPECT_DOUBLE_EQ(e["score"].get<double>(), want[i].score);
        EXPECT_EQ(e["preview_url"], "/v1/fonts/" + want[i].font_id + "/glyphs/A.png");
        const auto it = std::find_if(art().fonts.begin(), art().fonts.end(),
                                     [&](const SyntheticFont& f) { return f.font_id == want[i].font_id; });
        serif += it->attributes.serif_size >= 0.075 + it->bias.serif;
    }
    // Generator ground truth: the top results are serif fonts.
    EXPECT_GE(serif, 4);
}

TEST_F(Service, FootnoteTagsGiveTheFootnotePrompt) {
    TempDir dir("fontclip-footnote");
    std::vector<FontRecord> records;
    const auto add = [&](int n, std::vector<std::string> tags) {
        for (int i = 0; i < n; ++i)
            records.push_back({"f" + std::to_string(records.size()), GlyphStack(), tags});
    };
    add(5, {"informal", "hand", "cute"});
    add(2, {"informal", "hand"});
    add(2, {"informal"});
    write_corpus(dir.path() / "corpus", records);
    DatasetConfig dataset;
    dataset.min_occurrences = 1;
    const auto corpus = prepare_corpus(dir.path() / "corpus", dataset);
    auto model = initial_model(CoembedConfig{}, kFeatureDim, kFeatureDim);
    save_checkpoint(dir.path() / "ck.bin", model, 0, CoembedConfig{},
                    {{"text_encoder", kText}, {"dataset", dataset.to_json()}});
    FeatureSet fs = compute_features(corpus.records, ImageEncoder(GlyphAutoencoder<float>(AutoencoderConfig{.base_width = 2}).encoder),
                                     StubTextEncoder(7), corpus.vocabulary);
    json meta = {{"corpus_hash", corpus.corpus_hash}, {"checkpoint_hash", file_hash(dir.path() / "ck.bin")}, {"dataset", dataset.to_json()}};
    save_index(dir.path() / "index.bin", build_index(model, fs, meta));
    const RetrievalService s(ServiceConfig::from_json(
        {{"service", {{"index_path", "index.bin"}, {"corpus_path", "corpus"}, {"checkpoint_path", "ck.bin"}}},
         {"text_encoder", kText}},
        dir.path()));
    const auto r = post(s, "/v1/retrieve/by-tags", {{"tags", {"cute", "hand", "informal"}}, {"k", 3}});
    EXPECT_EQ(r["prompt"], "First, second, and third impressions are informal, hand, and cute, respectively.");
    EXPECT_EQ(r["used_tags"], json({"informal", "hand", "cute"}));
    // No encoder configured: uploads are refused, indexed fonts still work.
    EXPECT_EQ(post(s, "/v1/retrieve/by-font", {{"glyphs", json::array()}}, 503)["error"]["code"], "encoder_unavailable");
    EXPECT_EQ(post(s, "/v1/retrieve/by-font", {{"font_id", "f0"}, {"k", 2}})["results"].size(), 2u);
}

TEST_F(Service, MalformedRequestsAreRejectedWithCodes) {
    const std::string id = art().split.test.front();
    const auto code = [&](const std::string& path, const json& body, int status) {
        return post(svc(), path, body, status)["error"]["code"].get<std::string>();
    };
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", {"serif"}}, {"font_id", id}}, 400), "invalid_request");
    EXPECT_EQ(code("/v1/retrieve/by-font", {{"tags", {"serif"}}, {"font_id", id}}, 400), "invalid_request");
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"k", 3}}, 400), "invalid_request");
    EXPECT_EQ(code("/v1/retrieve/by-font", {{"tags", {"serif"}}}, 400), "invalid_request");
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", json::array()}}, 400), "empty_tags");
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", "serif"}}, 400), "invalid_request");
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", {1, 2}}}, 400), "invalid_request");
    std::vector<std::string> eleven(11, "serif");
    EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", eleven}}, 400), "too_many_tags");
    for (const json& k : {json(0), json(-1), json(1000), json(2.5), json("3")})
        EXPECT_EQ(code("/v1/retrieve/by-tags", {{"tags", {"serif"}}, {"k", k}}, 400), "invalid_k") << k;
    EXPECT_EQ(code("/v1/retrieve/by-font", {{"font_id", "nope"}}, 404), "unknown_font");
    EXPECT_EQ(code("/v1/retrieve/by-font", {{"font_id", 7}}, 400), "invalid_request");
    EXPECT_EQ(json::parse(svc().handle({"POST", "/v1/retrieve/by-tags", "not json"}).body)["error"]["code"], "invalid_json");
    EXPECT_EQ(json::parse(svc().handle({"POST", "/v1/retrieve/by-tags", "[1]"}).body)["error"]["code"], "invalid_json");
    EXPECT_EQ(get(svc(), "/v1/retrieve/by-tags", 404)["error"]["code"], "not_found");
    EXPECT_EQ(svc().handle({"PUT", "/v1/tags", ""}).status, 405);
}

TEST_F(Service, UnknownTagListsNearMatches) {
    const auto r = post(svc(), "/v1/retrieve/by-tags", {{"tags", {"bold", "serfi"}}}, 422);
    EXPECT_EQ(r["error"]["code"], "unknown_tag");
    EXPECT_EQ(r["error"]["tag"], "serfi");
    const auto s = r["error"]["suggestions"].get<std::vector<std::string>>();
    ASSERT_FALSE(s.empty());
    EXPECT_EQ(s.front(), "serif");
}

TEST_F(Service, SubsetQueriesBeyondExistingTagLists) {
    // No font is both light and bold; the query is still answered.
    const auto r = post(svc(), "/v1/retrieve/by-tags", {{"tags", {"light", "bold"}}, {"k", 3}});
    EXPECT_EQ(r["results"].size(), 3u);
}

TEST_F(Service, ExactTagListRanksItsFontAboveTheMedian) {
    const auto n = snap().index.size();
    std::size_t above = 0;
    for (const auto& id : art().split.test) {
        const auto r = post(svc(), "/v1/retrieve/by-tags", {{"tags", snap().fonts.at(id)->tags}, {"k", n}});
        for (std::size_t i = 0; i < n; ++i)
            if (r["results"][i]["font_id"] == id) above += 2 * (i + 1) < n + 1;
    }
    EXPECT_GE(above, art().split.test.size() * 9 / 10) << above << " of " << art().split.test.size();
}

TEST_F(Service, FontQueryRankMatchesEvalSuite) {
    const auto n = snap().index.size();
    const auto ranks = retrieval_ranks(snap().index, Direction::ImageToTag);
    for (std::size_t q = 0; q < n; ++q) {
        const auto& id = snap().index.font_ids()[q];
        const auto r = post(svc(), "/v1/retrieve/by-font", {{"font_id", id}, {"k", n}});
        ASSERT_EQ(r["results"].size(), n);
        // Ranks count strictly better scores; equal tag sets tie.
        double own = 0;
        for (const auto& e : r["results"])
            if (e["font_id"] == id) own = e["score"].get<double>();
        int better = 0;
        for (const auto& e : r["results"]) better += e["score"].get<double>() > own;
        EXPECT_EQ(better + 1, ranks[q]) << id;
    }
}

TEST_F(Service, FontQueryNeighborsShareGroundTruthTags) {
    std::map<std::string, const SyntheticFont*> truth;
    for (const auto& f : art().fonts) truth[f.font_id] = &f;
    std::size_t share = 0;
    for (const auto& id : art().split.test) {
        const auto r = post(svc(), "/v1/retrieve/by-font", {{"font_id", id}, {"k", 1}, {"exclude_self", true}});
        ASSERT_EQ(r["results"].size(), 1u);
        EXPECT_NE(r["results"][0]["font_id"], id);
        const auto& clean = truth.at(id)->clean_tags;
        bool any = false;
        for (const auto& t : r["results"][0]["tags"]) any |= std::find(clean.begin(), clean.end(), t.get<std::string>()) != clean.end();
        share += any;
    }
    EXPECT_GE(5 * share, 4 * art().split.test.size()) << share << " of " << art().split.test.size();
}

TEST_F(Service, GlyphUploadMatchesFontIdQuery) {
    const auto n = snap().index.size();
    const auto& id = art().split.test[2];
    const auto by_id = post(svc(), "/v1/retrieve/by-font", {{"font_id", id}, {"k", n}});
    const auto up = post(svc(), "/v1/retrieve/by-font", {{"glyphs", upload_of(*snap().fonts.at(id))}, {"k", n}});
    for (std::size_t i = 0; i < n; ++i) {
        EXPECT_EQ(up["results"][i]["font_id"], by_id["results"][i]["font_id"]) << i;
        EXPECT_NEAR(up["results"][i]["score"].get<double>(), by_id["results"][i]["score"].get<double>(), 1e-5);
    }
    json keyed = json::object();
    const auto list = upload_of(*snap().fonts.at(id));
    for (int c = 0; c < kLetterCount; ++c) keyed[std::string(1, letter_of(c))] = list[c];
    EXPECT_EQ(post(svc(), "/v1/retrieve/by-font", {{"glyphs", keyed}, {"k", 3}})["results"],
              post(svc(), "/v1/retrieve/by-font", {{"glyphs", list}, {"k", 3}})["results"]);
}

TEST_F(Service, FontOutsideTheIndexIsEncodedOnTheFly) {
    const auto& id = art().split.train.front();
    ASSERT_FALSE(snap().index.position(id));
    const auto r = post(svc(), "/v1/retrieve/by-font", {{"font_id", id}, {"k", 4}, {"exclude_self", true}});
    EXPECT_EQ(r["results"].size(), 4u);
    EXPECT_FALSE(get(svc(), "/v1/fonts/" + id)["in_index"].get<bool>());
}

TEST_F(Service, InvalidUploadsAre422) {
    const auto list = upload_of(*snap().fonts.at(art().split.test.front()));
    const auto code = [&](const json& glyphs) {
        return post(svc(), "/v1/retrieve/by-font", {{"glyphs", glyphs}}, 422)["error"]["code"].get<std::string>();
    };
    json short_list = list;
    short_list.erase(short_list.begin());
    EXPECT_EQ(code(short_list), "invalid_glyphs");
    json bad_b64 = list;
    bad_b64[3] = "***";
    EXPECT_EQ(code(bad_b64), "invalid_glyphs");
    json not_png = list;
    not_png[3] = base64({1, 2, 3, 4});
    EXPECT_EQ(code(not_png), "invalid_glyphs");
    json wrong_size = list;
    wrong_size[5] = base64(encode_png(GrayImage{32, 32, std::vector<std::uint8_t>(32 * 32, 0)}));
    EXPECT_EQ(code(wrong_size), "invalid_glyphs");
    json missing = json::object();
    missing["A"] = list[0];
    EXPECT_EQ(code(missing), "invalid_glyphs");
    EXPECT_EQ(code("A"), "invalid_glyphs");
}

TEST_F(Service, RepeatedRequestsGiveIdenticalBodies) {
    const std::string body = json{{"tags", {"bold", "italic"}}, {"k", 7}}.dump();
    const auto a = svc().handle({"POST", "/v1/retrieve/by-tags", body});
    const auto b = svc().handle({"POST", "/v1/retrieve/by-tags", body});
    EXPECT_EQ(a.body, b.body);
}

TEST_F(Service, OverHttp) {
    httplib::Server server;
    service_->mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    const auto h = client.Get("/v1/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 200);
    EXPECT_EQ(h->get_header_value("X-Index-Hash"), snap().index.content_hash());
    const auto r = client.Post("/v1/retrieve/by-tags", json{{"tags", {"serif"}}, {"k", 2}}.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(json::parse(r->body)["results"].size(), 2u);
    const auto png = client.Get("/v1/fonts/" + art().split.test.front() + "/glyphs/A.png");
    ASSERT_TRUE(png);
    EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
    const auto bad = client.Post("/v1/retrieve/by-tags", "{}", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    server.stop();
    t.join();
}

TEST_F(Service, BusyPortFailsStartup) {
    httplib::Server blocker;
    const int port = blocker.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    auto cfg = art().service_config();
    cfg.port = port;
    RetrievalService s(cfg);
    EXPECT_THROW(s.serve(), StartupError);
}

TEST_F(Service, FilesAreNotModified) {
    const auto before = std::vector{file_hash(art().root / "index.bin"), file_hash(art().root / "ck.bin"),
                                    corpus_hash(art().corpus)};
    post(svc(), "/v1/retrieve/by-tags", {{"tags", {"serif"}}});
    post(svc(), "/v1/retrieve/by-font", {{"font_id", art().split.test.front()}});
    EXPECT_EQ(before, (std::vector{file_hash(art().root / "index.bin"), file_hash(art().root / "ck.bin"),
                                   corpus_hash(art().corpus)}));
}

TEST(ServiceStartup, HashMismatchesFailWithDiagnostics) {
    log::set_quiet(true);
    TempDir dir("fontclip-startup");
    const auto a = make_artifacts(dir.path(), 120, 5, 5, "all");
    EXPECT_NO_THROW(RetrievalService(a.service_config()));

    // Retrain a different checkpoint over the old file.
    auto bad_ck = a.config;
    {
        CoembeddingModel m = load_checkpoint(dir.path() / "ck.bin").model;
        m.temperature.log_scale += 0.5;
        save_checkpoint(dir.path() / "ck2.bin", m, 1, CoembedConfig{}, {{"text_encoder", kText}});
        bad_ck["service"]["checkpoint_path"] = "ck2.bin";
    }
    try {
        RetrievalService s(ServiceConfig::from_json(bad_ck, dir.path()));
        ADD_FAILURE() << "started with a foreign checkpoint";
    } catch (const StartupError& e) {
        EXPECT_NE(std::string(e.what()).find("checkpoint hash mismatch"), std::string::npos) << e.what();
    }

    auto other_text = a.config;
    other_text["text_encoder"]["seed"] = 8;
    try {
        RetrievalService s(ServiceConfig::from_json(other_text, dir.path()));
        ADD_FAILURE() << "started with a different text encoder";
    } catch (const StartupError& e) {
        EXPECT_NE(std::string(e.what()).find("text encoder"), std::string::npos) << e.what();
    }

    auto no_index = a.config;
    no_index["service"]["index_path"] = "missing.bin";
    EXPECT_THROW(RetrievalService(ServiceConfig::from_json(no_index, dir.path())), StartupError);

    // Edit the corpus after the index was built.
    {
        std::ifstream in(a.corpus / "meta.jsonl");
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);) lines.push_back(line);
        in.close();
        auto first = json::parse(lines.front());
        lines.front() = meta_line(first["font_id"], {"bold", "serif"});
        std::ofstream out(a.corpus / "meta.jsonl");
        for (const auto& line : lines) out << line << '\n';
    }
    try {
        RetrievalService s(a.service_config());
        ADD_FAILURE() << "started with an edited corpus";
    } catch (const StartupError& e) {
        EXPECT_NE(std::string(e.what()).find("corpus hash mismatch"), std::string::npos) << e.what();
    }
}

TEST(ServiceReload, SwapsWholeSnapshotsUnderLoad) {
    log::set_quiet(true);
    TempDir dir("fontclip-reload");
    TempDir alt("fontclip-reload-alt");
    const auto a = make_artifacts(dir.path(), 120, 6, 20, "all");
    const auto b = make_artifacts(alt.path(), 120, 6, 60, "all");
    RetrievalService s(a.service_config());
    const std::string body = json{{"tags", {"bold"}}, {"k", 5}}.dump();
    std::map<std::string, std::string> expected;
    const auto record = [&] {
        const auto r = s.handle({"POST", "/v1/retrieve/by-tags", body});
        expected[r.index_hash] = r.body;
    };
    record();

    std::atomic<bool> stop{false};
    std::atomic<int> inconsistent{0};
    std::thread reader([&] {
        while (!stop) {
            const auto r = s.handle({"POST", "/v1/retrieve/by-tags", body});
            if (json::parse(r.body)["index_hash"] != r.index_hash) ++inconsistent;
        }
    });
    for (const char* f : {"index.bin", "ck.bin"})
        std::filesystem::copy_file(alt.path() / f, dir.path() / f, std::filesystem::copy_options::overwrite_existing);
    s.reload();
    const auto after = s.handle({"POST", "/v1/retrieve/by-tags", body});
    stop = true;
    reader.join();
    EXPECT_EQ(inconsistent, 0);
    EXPECT_NE(after.index_hash, expected.begin()->first);
    EXPECT_EQ(after.index_hash, load_index(alt.path() / "index.bin").content_hash());

    // A failing reload keeps the current snapshot.
    std::filesystem::remove(dir.path() / "index.bin");
    EXPECT_THROW(s.reload(), StartupError);
    EXPECT_EQ(s.handle({"GET", "/v1/health", ""}).index_hash, after.index_hash);
    (void)b;
}

TEST(ServiceConfigFile, EnvironmentOverridesAndRelativePaths) {
    TempDir dir("fontclip-config");
    {
        std::ofstream out(dir.path() / "serve.json");
        out << R"({"service": {"index_path": "i.bin", "corpus_path": "/data/c", "checkpoint_path": "ck.bin", "port": 8000},
                  "text_encoder": {"type": "stub", "seed": 1}})";
    }
    std::string e1 = "FONTCLIP_SERVICE__PORT=9123", e2 = "FONTCLIP_TEXT_ENCODER__SEED=7", e3 = "FONTCLIP_SERVICE__HOST=0.0.0.0",
                e4 = "FONTCLIP_PORT=1", e5 = "OTHER__X=1";
    char* env[] = {e1.data(), e2.data(), e3.data(), e4.data(), e5.data(), nullptr};
    const auto c = load_service_config(dir.path() / "serve.json", env);
    EXPECT_EQ(c.port, 9123);
    EXPECT_EQ(c.host, "0.0.0.0");
    EXPECT_EQ(c.text_encoder["seed"], 7);
    EXPECT_EQ(c.index_path, dir.path() / "i.bin");
    EXPECT_EQ(c.corpus_path, "/data/c");
    EXPECT_FALSE(c.encoder_path);
    EXPECT_EQ(c.max_k, 50u);

    EXPECT_THROW(ServiceConfig::from_json({{"service", {{"index_path", "x"}}}}), ConfigError);
    EXPECT_THROW(ServiceConfig::from_json(json::array()), ConfigError);
    EXPECT_THROW(ServiceConfig::from_json({{"service", {{"index_path", "a"}, {"corpus_path", "b"}, {"checkpoint_path", "c"}, {"max_k", 0}}}}),
                 ConfigError);
    EXPECT_THROW(ServiceConfig::from_json({{"service", {{"index_path", "a"}, {"corpus_path", "b"}, {"checkpoint_path", "c"}, {"port", 70000}}}}),
                 ConfigError);
    EXPECT_THROW(load_service_config(dir.path() / "absent.json", env), ConfigError);
}

TEST(Base64, RoundTripsHttplibEncoding) {
    for (const std::string s : {"", "a", "ab", "abc", "abcd", "\x01\xff\x80 binary"}) {
        const auto d = detail::base64_decode(httplib::detail::base64_encode(s));
        ASSERT_TRUE(d);
        EXPECT_EQ(std::string(d->begin(), d->end()), s);
    }
    EXPECT_FALSE(detail::base64_decode("ab=c"));
    EXPECT_FALSE(detail::base64_decode("a$"));
}
