#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "../autoencoder/weights_io.hpp"
#include "../coembed/trainer.hpp"
#include "../common/log.hpp"
#include "../pipeline/artifacts.hpp"
#include "../retrieval/index.hpp"
#include "../retrieval/tag_query.hpp"
#include "config.hpp"

namespace fontclip {

/// Raised when the service cannot start; the message lists every problem found.
class StartupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a request may read. Never mutated after construction.
struct ServiceSnapshot {
    ServiceConfig config;
    EmbeddingIndex index;
    PreparedCorpus corpus;
    std::map<std::string, const FontRecord*> fonts;
    CoembeddingModel model;
    std::unique_ptr<TextEncoderAdapter> text_encoder;
    std::optional<ImageEncoder> image_encoder;
    std::size_t max_k = 0;
    nlohmann::json hashes;  ///< index_hash, corpus_hash, checkpoint_hash, config_hash
    std::vector<std::string> warnings;
};

/// Loads and cross-checks index, corpus, checkpoint and encoder.
inline std::shared_ptr<const ServiceSnapshot> load_snapshot(const ServiceConfig& config) {
    auto snap = std::make_shared<ServiceSnapshot>();
    snap->config = config;
    std::vector<std::string> problems;
    const auto fail = [&] {
        std::string msg = "service startup failed:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw StartupError(msg);
    };
    try {
        snap->index = load_index(config.index_path);
    } catch (const std::exception& e) {
        problems.push_back("index " + config.index_path.string() + ": " + e.what());
    }
    Checkpoint ck;
    try {
        ck = load_checkpoint(config.checkpoint_path);
    } catch (const std::exception& e) {
        problems.push_back("checkpoint " + config.checkpoint_path.string() + ": " + e.what());
    }
    if (!problems.empty()) fail();
    const auto& meta = snap->index.metadata();

    DatasetConfig dataset = config.dataset;
    if (meta.contains("dataset")) dataset = DatasetConfig::from_json(meta.at("dataset"));
    try {
        snap->corpus = prepare_corpus(config.corpus_path, dataset);
    } catch (const std::exception& e) {
        problems.push_back("corpus " + config.corpus_path.string() + ": " + e.what());
        fail();
    }
    snap->fonts = snap->corpus.by_id();
    snap->warnings = snap->corpus.warnings;

    const auto expect = [&](const char* key, const std::string& actual, const std::string& what) {
        if (!meta.contains(key)) {
            problems.push_back("index metadata lacks " + std::string(key) + "; rebuild it with build-index");
        } else if (meta.at(key).get<std::string>() != actual) {
            problems.push_back(what + " hash mismatch: index was built from " + meta.at(key).get<std::string>() +
                               ", found " + actual);
        }
    };
    expect("corpus_hash", snap->corpus.corpus_hash, "corpus");
    expect("checkpoint_hash", ck.file_hash, "checkpoint");
    for (const auto& id : snap->index.font_ids())
        if (!snap->fonts.contains(id)) {
            problems.push_back("index font '" + id + "' is not in the corpus after preprocessing");
            break;
        }
    if (ck.model.tag_head.config().out_dim != snap->index.dim())
        problems.push_back("checkpoint latent dimension " + std::to_string(ck.model.tag_head.config().out_dim) +
                           " differs from index dimension " + std::to_string(snap->index.dim()));
    if (ck.header.contains("extra") && ck.header.at("extra").contains("text_encoder") &&
        ck.header.at("extra").at("text_encoder") != config.text_encoder)
        problems.push_back("text encoder " + config.text_encoder.dump() + " differs from the one used in training " +
                           ck.header.at("extra").at("text_encoder").dump());
    try {
        snap->text_encoder = make_text_encoder(config.text_encoder);
    } catch (const std::exception& e) {
        problems.push_back(std::string("text encoder: ") + e.what());
    }
    if (config.encoder_path) {
        try {
            snap->image_encoder = load_encoder(*config.encoder_path);
            if (meta.contains("encoder_hash")) expect("encoder_hash", file_hash(*config.encoder_path), "image encoder");
            if (snap->image_encoder->feature_dim() != ck.model.image_head.config().in_dim)
                problems.push_back("image encoder feature size does not match the checkpoint's image head");
        } catch (const std::exception& e) {
            problems.push_back("image encoder " + config.encoder_path->string() + ": " + e.what());
        }
    }
    if (!problems.empty()) fail();

    snap->model = std::move(ck.model);
    snap->max_k = std::min(config.max_k, snap->index.size());
    if (snap->max_k < config.max_k)
        snap->warnings.push_back("max_k clipped to the index size " + std::to_string(snap->max_k));
    snap->hashes = {{"index_hash", snap->index.content_hash()},
                    {"corpus_hash", snap->corpus.corpus_hash},
                    {"checkpoint_hash", ck.file_hash},
                    {"config_hash", config.hash()}};
    for (const auto& w : snap->warnings) log::warn(w);
    return snap;
}

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
    std::string index_hash;
};

struct HttpRequest {
    std::string method;
    std::string path;
    std::string body;
};

namespace detail {

inline std::optional<std::vector<std::uint8_t>> base64_decode(const std::string& in) {
    static const auto table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const std::string chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (std::size_t i = 0; i < chars.size(); ++i) t[static_cast<unsigned char>(chars[i])] = static_cast<int>(i);
        return t;
    }();
    std::vector<std::uint8_t> out;
    out.reserve(in.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    std::size_t pad = 0;
    for (char ch : in) {
        if (ch == '=') {
            ++pad;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) continue;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0 || pad) return std::nullopt;
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    if (pad > 2) return std::nullopt;
    return out;
}

}  // namespace detail

/// HTTP API over an immutable snapshot. Requests hold a shared_ptr to the
/// snapshot they started with, so reload() never exposes a partial state.
class RetrievalService {
public:
    explicit RetrievalService(ServiceConfig config) : config_(std::move(config)), snapshot_(load_snapshot(config_)) {}

    [[nodiscard]] std::shared_ptr<const ServiceSnapshot> snapshot() const {
        std::lock_guard lock(mutex_);
        return snapshot_;
    }

    /// Loads a fresh snapshot from the configured paths and swaps it in. On
    /// failure the current snapshot stays and the error propagates.
    void reload() {
        auto next = load_snapshot(config_);
        std::lock_guard lock(mutex_);
        snapshot_ = std::move(next);
    }

    [[nodiscard]] HttpResponse handle(const HttpRequest& req) const {
        const auto snap = snapshot();
        HttpResponse res = dispatch(*snap, req);
        res.index_hash = snap->hashes.at("index_hash").get<std::string>();
        return res;
    }

    /// Routes every /v1 path through handle().
    void mount(httplib::Server& server) {
        const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
            HttpResponse out;
            if (req.method == "POST" && req.path == "/v1/reload") {
                try {
                    reload();
                    out = handle({"GET", "/v1/health", ""});
                } catch (const std::exception& e) {
                    out = error(*snapshot(), 500, "reload_failed", e.what());
                    out.index_hash = snapshot()->hashes.at("index_hash").get<std::string>();
                }
            } else {
                out = handle({req.method, req.path, req.body});
            }
            res.status = out.status;
            res.set_header("X-Index-Hash", out.index_hash);
            res.set_content(out.body, out.content_type);
        };
        server.Get(R"(/.*)", forward);
        server.Post(R"(/.*)", forward);
    }

    /// Blocks until the server stops. Throws StartupError if the port cannot be bound.
    void serve() {
        httplib::Server server;
        // The library default sets SO_REUSEPORT, which lets a second server share a busy port.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        mount(server);
        if (!server.bind_to_port(config_.host, config_.port))
            throw StartupError("cannot bind " + config_.host + ":" + std::to_string(config_.port) + " (port busy?)");
        log::info("serving " + std::to_string(snapshot()->index.size()) + " fonts on http://" + config_.host + ":" +
                  std::to_string(config_.port));
        server.listen_after_bind();
    }

    [[nodiscard]] const ServiceConfig& config() const { return config_; }

private:
    static nlohmann::json with_hash(const ServiceSnapshot& s, nlohmann::json body) {
        body["index_hash"] = s.hashes.at("index_hash");
        return body;
    }

    static HttpResponse json(const ServiceSnapshot& s, int status, nlohmann::json body) {
        return {status, with_hash(s, std::move(body)).dump(), "application/json", {}};
    }

    static HttpResponse error(const ServiceSnapshot& s, int status, const std::string& code, const std::string& message,
                              nlohmann::json extra = nlohmann::json::object()) {
        nlohmann::json e = {{"code", code}, {"message", message}};
        e.update(extra);
        return json(s, status, {{"error", e}});
    }

    static std::string glyph_url(const std::string& font_id, int channel) {
        return "/v1/fonts/" + font_id + "/glyphs/" + std::string(1, letter_of(channel)) + ".png";
    }

    static nlohmann::json font_entry(const ServiceSnapshot& s, std::size_t rank, const ScoredFont& f) {
        const auto it = s.fonts.find(f.font_id);
        return {{"rank", rank},
                {"font_id", f.font_id},
                {"score", f.score},
                {"tags", it != s.fonts.end() ? it->second->tags : std::vector<std::string>{}},
                {"preview_url", glyph_url(f.font_id, 0)}};
    }

    static HttpResponse dispatch(const ServiceSnapshot& s, const HttpRequest& req) {
        static const std::regex font_path(R"(^/v1/fonts/([^/]+)$)");
        static const std::regex glyph_path(R"(^/v1/fonts/([^/]+)/glyphs/([^/]+)\.png$)");
        std::smatch m;
        if (req.method == "GET") {
            if (req.path == "/v1/health") return health(s);
            if (req.path == "/v1/tags") return tags(s);
            if (std::regex_match(req.path, m, glyph_path)) return glyph(s, m[1], m[2]);
            if (std::regex_match(req.path, m, font_path)) return font(s, m[1]);
        } else if (req.method == "POST") {
            if (req.path == "/v1/retrieve/by-tags" || req.path == "/v1/retrieve/by-font") {
                auto body = nlohmann::json::parse(req.body, nullptr, false);
                if (body.is_discarded() || !body.is_object())
                    return error(s, 400, "invalid_json", "request body must be a JSON object");
                try {
                    return req.path == "/v1/retrieve/by-tags" ? by_tags(s, body) : by_font(s, body);
                } catch (const nlohmann::json::exception& e) {
                    return error(s, 400, "invalid_request", std::string("malformed request: ") + e.what());
                } catch (const AdapterUnavailable& e) {
                    return error(s, 503, "text_encoder_unavailable", e.what());
                }
            }
        } else {
            return error(s, 405, "method_not_allowed", "method " + req.method + " is not supported");
        }
        return error(s, 404, "not_found", "no endpoint " + req.method + " " + req.path);
    }

    static HttpResponse health(const ServiceSnapshot& s) {
        nlohmann::json body = {{"status", "ok"},
                               {"index_size", s.index.size()},
                               {"dim", s.index.dim()},
                               {"vocabulary_size", s.corpus.vocabulary.size()},
                               {"max_k", s.max_k},
                               {"text_encoder", s.text_encoder->name()},
                               {"glyph_upload", s.image_encoder.has_value()}};
        body.update(s.hashes);
        return json(s, 200, body);
    }

    static HttpResponse tags(const ServiceSnapshot& s) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& t : s.corpus.vocabulary.by_frequency())
            list.push_back({{"tag", t}, {"count", s.corpus.vocabulary.count(t)}});
        return json(s, 200, {{"tags", list}});
    }

    static HttpResponse font(const ServiceSnapshot& s, const std::string& id) {
        const auto it = s.fonts.find(id);
        if (it == s.fonts.end()) return error(s, 404, "unknown_font", "font '" + id + "' is not in the corpus");
        nlohmann::json glyphs = nlohmann::json::object();
        for (int c = 0; c < kLetterCount; ++c) glyphs[std::string(1, letter_of(c))] = glyph_url(id, c);
        return json(s, 200,
                    {{"font_id", id},
                     {"tags", it->second->tags},
                     {"in_index", s.index.position(id).has_value()},
                     {"glyphs", glyphs}});
    }

    static HttpResponse glyph(const ServiceSnapshot& s, const std::string& id, const std::string& letter) {
        const auto it = s.fonts.find(id);
        if (it == s.fonts.end()) return error(s, 404, "unknown_font", "font '" + id + "' is not in the corpus");
        if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'Z')
            return error(s, 404, "unknown_letter", "glyph '" + letter + "' is not one of A-Z");
        const auto png = encode_png(glyph_to_image(it->second->glyphs.channel(letter[0] - 'A')));
        return {200, std::string(png.begin(), png.end()), "image/png", {}};
    }

    static std::optional<HttpResponse> parse_k(const ServiceSnapshot& s, const nlohmann::json& body, std::size_t& k) {
        if (!body.contains("k")) {
            k = std::min<std::size_t>(10, s.max_k);
            return std::nullopt;
        }
        if (!body.at("k").is_number_integer())
            return error(s, 400, "invalid_k", "k must be an integer");
        const auto v = body.at("k").get<std::int64_t>();
        if (v < 1 || static_cast<std::size_t>(v) > s.max_k)
            return error(s, 400, "invalid_k", "k must be in [1, " + std::to_string(s.max_k) + "]",
                         {{"max_k", s.max_k}});
        k = static_cast<std::size_t>(v);
        return std::nullopt;
    }

    static std::optional<HttpResponse> exactly_one(const ServiceSnapshot& s, const nlohmann::json& body) {
        const int present = body.contains("tags") + body.contains("font_id") + body.contains("glyphs");
        if (present != 1)
            return error(s, 400, "invalid_request", "give exactly one of tags, font_id or glyphs");
        return std::nullopt;
    }

    static HttpResponse by_tags(const ServiceSnapshot& s, const nlohmann::json& body) {
        if (auto bad = exactly_one(s, body)) return *bad;
        if (!body.contains("tags"))
            return error(s, 400, "invalid_request", "by-tags needs a tags list; use by-font for font queries");
        std::size_t k = 0;
        if (auto bad = parse_k(s, body, k)) return *bad;
        const auto& t = body.at("tags");
        if (!t.is_array()) return error(s, 400, "invalid_request", "tags must be a list of strings");
        std::vector<std::string> tags;
        for (const auto& x : t) {
            if (!x.is_string()) return error(s, 400, "invalid_request", "tags must be a list of strings");
            tags.push_back(x.get<std::string>());
        }
        if (tags.empty()) return error(s, 400, "empty_tags", "at least one tag is required");
        if (tags.size() > kMaxPromptTags)
            return error(s, 400, "too_many_tags", "at most " + std::to_string(kMaxPromptTags) + " tags per query");
        TagLatent tl;
        try {
            tl = tag_latent(tags, s.corpus.vocabulary, *s.text_encoder, s.model.tag_head);
        } catch (const UnknownTagError& e) {
            return error(s, 422, "unknown_tag", e.what(), {{"tag", e.tag()}, {"suggestions", e.suggestions()}});
        }
        const auto results = s.index.query_by_tag_latent(tl.latent, k);
        nlohmann::json list = nlohmann::json::array();
        for (std::size_t i = 0; i < results.size(); ++i) list.push_back(font_entry(s, i + 1, results[i]));
        return json(s, 200, {{"prompt", tl.prompt.text}, {"used_tags", tl.prompt.used_tags}, {"k", k}, {"results", list}});
    }

    static HttpResponse by_font(const ServiceSnapshot& s, const nlohmann::json& body) {
        if (auto bad = exactly_one(s, body)) return *bad;
        if (body.contains("tags"))
            return error(s, 400, "invalid_request", "by-font takes font_id or glyphs; use by-tags for tag queries");
        std::size_t k = 0;
        if (auto bad = parse_k(s, body, k)) return *bad;
        std::vector<float> query;
        nlohmann::json echo;
        if (body.contains("font_id")) {
            const auto id = body.at("font_id").get<std::string>();
            echo = {{"font_id", id}};
            if (s.index.position(id)) {
                query = s.index.latent(Side::Image, id);
            } else {
                const auto it = s.fonts.find(id);
                if (it == s.fonts.end()) return error(s, 404, "unknown_font", "font '" + id + "' is not in the corpus");
                if (!s.image_encoder)
                    return error(s, 503, "encoder_unavailable",
                                 "font '" + id + "' is not indexed and no image encoder is configured");
                query = s.model.image_head.project(s.image_encoder->encode(it->second->glyphs).values);
            }
        } else {
            if (!s.image_encoder)
                return error(s, 503, "encoder_unavailable", "glyph uploads need service.encoder_path");
            std::string why;
            const auto stack = decode_upload(body.at("glyphs"), why);
            if (!stack) return error(s, 422, "invalid_glyphs", why);
            query = s.model.image_head.project(s.image_encoder->encode(*stack).values);
            echo = {{"glyphs", "upload"}};
        }
        // exclude_self drops the query font's own tag set from the ranking.
        const bool exclude_self = body.value("exclude_self", false);
        const std::string self = body.contains("font_id") ? body.at("font_id").get<std::string>() : std::string{};
        const bool drop = exclude_self && s.index.position(self).has_value();
        if (drop && k >= s.index.size())
            return error(s, 400, "invalid_k", "k must be below the index size when excluding the query font");
        auto results = s.index.query_by_image_latent(query, drop ? k + 1 : k);
        if (drop) {
            std::erase_if(results, [&](const ScoredFont& f) { return f.font_id == self; });
            results.resize(std::min(results.size(), k));
        }
        nlohmann::json list = nlohmann::json::array();
        for (std::size_t i = 0; i < results.size(); ++i) list.push_back(font_entry(s, i + 1, results[i]));
        return json(s, 200, {{"query", echo}, {"k", k}, {"exclude_self", exclude_self}, {"results", list}});
    }

    /// `glyphs` is a list of 26 base64 PNGs (A..Z) or an object keyed by letter.
    static std::optional<GlyphStack> decode_upload(const nlohmann::json& glyphs, std::string& why) {
        std::vector<std::string> encoded(kLetterCount);
        if (glyphs.is_array()) {
            if (glyphs.size() != static_cast<std::size_t>(kLetterCount)) {
                why = "glyph upload needs 26 images, got " + std::to_string(glyphs.size());
                return std::nullopt;
            }
            for (int c = 0; c < kLetterCount; ++c) encoded[c] = glyphs.at(c).get<std::string>();
        } else if (glyphs.is_object()) {
            for (int c = 0; c < kLetterCount; ++c) {
                const std::string key(1, letter_of(c));
                if (!glyphs.contains(key)) {
                    why = "glyph upload lacks letter " + key;
                    return std::nullopt;
                }
                encoded[c] = glyphs.at(key).get<std::string>();
            }
            if (glyphs.size() != static_cast<std::size_t>(kLetterCount)) {
                why = "glyph upload has keys other than A-Z";
                return std::nullopt;
            }
        } else {
            why = "glyphs must be a list or an object of base64 PNG strings";
            return std::nullopt;
        }
        std::vector<float> pixels;
        pixels.reserve(kStackValues);
        for (int c = 0; c < kLetterCount; ++c) {
            const std::string name = std::string("glyph ") + letter_of(c);
            const auto bytes = detail::base64_decode(encoded[c]);
            if (!bytes) {
                why = name + " is not valid base64";
                return std::nullopt;
            }
            const auto ch = decode_glyph_png(*bytes, name, &why);
            if (!ch) return std::nullopt;
            pixels.insert(pixels.end(), ch->begin(), ch->end());
        }
        return GlyphStack(std::move(pixels));
    }

    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::shared_ptr<const ServiceSnapshot> snapshot_;
};

}  // namespace fontclip
