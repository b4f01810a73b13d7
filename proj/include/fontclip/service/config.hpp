#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "../common/hash.hpp"
#include "../pipeline/artifacts.hpp"

extern char** environ;

namespace fontclip {

inline constexpr const char* kEnvPrefix = "FONTCLIP_";

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Applies FONTCLIP_<SECTION>__<KEY>=value overrides to a config document.
/// Names are lower-cased; values that parse as JSON keep their type, anything
/// else is taken as a string. FONTCLIP_PORT-style names without "__" are ignored.
inline void apply_env_overrides(nlohmann::json& doc, char** env = environ) {
    const std::string prefix = kEnvPrefix;
    for (char** e = env; e && *e; ++e) {
        const std::string entry = *e;
        const auto eq = entry.find('=');
        if (eq == std::string::npos || entry.compare(0, prefix.size(), prefix) != 0) continue;
        std::string name = entry.substr(prefix.size(), eq - prefix.size());
        const std::string value = entry.substr(eq + 1);
        const auto sep = name.find("__");
        if (sep == std::string::npos || sep == 0 || sep + 2 >= name.size()) continue;
        for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        const std::string section = name.substr(0, sep);
        const std::string key = name.substr(sep + 2);
        auto parsed = nlohmann::json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;
        if (!doc.contains(section) || !doc[section].is_object()) doc[section] = nlohmann::json::object();
        doc[section][key] = std::move(parsed);
    }
}

/// Settings for `serve`. Relative paths resolve against the config file's directory.
struct ServiceConfig {
    std::filesystem::path index_path;
    std::filesystem::path corpus_path;
    std::filesystem::path checkpoint_path;
    std::optional<std::filesystem::path> encoder_path;  ///< enables glyph uploads
    nlohmann::json text_encoder = {{"type", "stub"}, {"seed", 0}};
    DatasetConfig dataset;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t max_k = 50;

    static ServiceConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base = {}) {
        if (!doc.is_object()) throw ConfigError("config must be a JSON object");
        const auto& s = doc.contains("service") ? doc.at("service") : nlohmann::json::object();
        const auto path = [&](const char* key, bool required) -> std::optional<std::filesystem::path> {
            if (!s.contains(key) || s.at(key).is_null()) {
                if (required) throw ConfigError(std::string("service.") + key + " is required");
                return std::nullopt;
            }
            std::filesystem::path p = s.at(key).get<std::string>();
            return p.is_absolute() || base.empty() ? p : base / p;
        };
        ServiceConfig c;
        try {
            c.index_path = *path("index_path", true);
            c.corpus_path = *path("corpus_path", true);
            c.checkpoint_path = *path("checkpoint_path", true);
            c.encoder_path = path("encoder_path", false);
            c.host = s.value("host", c.host);
            c.port = s.value("port", c.port);
            const auto max_k = s.value("max_k", static_cast<std::int64_t>(c.max_k));
            if (max_k < 1) throw ConfigError("service.max_k must be >= 1");
            c.max_k = static_cast<std::size_t>(max_k);
            if (doc.contains("text_encoder")) c.text_encoder = doc.at("text_encoder");
            if (doc.contains("dataset")) c.dataset = DatasetConfig::from_json(doc.at("dataset"));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed config: ") + e.what());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (c.port < 0 || c.port > 65535) throw ConfigError("service.port out of range");
        return c;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json s = {{"index_path", index_path.string()},
                            {"corpus_path", corpus_path.string()},
                            {"checkpoint_path", checkpoint_path.string()},
                            {"encoder_path", encoder_path ? nlohmann::json(encoder_path->string()) : nlohmann::json(nullptr)},
                            {"host", host},
                            {"port", port},
                            {"max_k", max_k}};
        return {{"service", s}, {"text_encoder", text_encoder}, {"dataset", dataset.to_json()}};
    }

    [[nodiscard]] std::string hash() const { return hex_digest(fnv1a(to_json().dump())); }
};

/// Reads a config file (JSON), then applies environment overrides.
inline ServiceConfig load_service_config(const std::filesystem::path& file, char** env = environ) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + file.string() + " is not valid JSON");
    apply_env_overrides(doc, env);
    return ServiceConfig::from_json(doc, file.parent_path());
}

}  // namespace fontclip
