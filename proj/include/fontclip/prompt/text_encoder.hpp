#pragma once

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "../common/hash.hpp"
#include "../common/random.hpp"
#include "prompt.hpp"

namespace fontclip {

inline constexpr int kFeatureDim = 512;

/// Pre-projection impression feature; not normalized.
struct ImpressionFeature {
    std::vector<float> values;
};

/// Raised when a text encoder cannot produce an embedding (missing weights,
/// prompt absent from a cache). Never replaced by a zero vector.
class AdapterUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frozen text encoder E_tag. Implementations must allow concurrent embed calls.
class TextEncoderAdapter {
public:
    virtual ~TextEncoderAdapter() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual bool deterministic() const = 0;
    [[nodiscard]] virtual int dim() const = 0;
    [[nodiscard]] virtual ImpressionFeature embed(const std::string& text) const = 0;
};

/// Hash-based stand-in: each token maps to a seeded Gaussian vector, and the
/// prompt is a weighted mean in which earlier content words weigh more.
/// Template words get a small fixed weight so prompts with disjoint tags stay
/// nearly orthogonal. Output is rescaled to unit RMS so the norm does not
/// depend on the number of tags.
class StubTextEncoder final : public TextEncoderAdapter {
public:
    explicit StubTextEncoder(std::uint64_t seed, int dim = kFeatureDim) : seed_(seed), dim_(dim) {
        if (dim < 1) throw std::invalid_argument("stub encoder dimension must be positive");
    }

    [[nodiscard]] std::string name() const override { return "stub"; }
    [[nodiscard]] bool deterministic() const override { return true; }
    [[nodiscard]] int dim() const override { return dim_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }

    [[nodiscard]] static std::vector<std::string> tokenize(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        const auto flush = [&] {
            while (!cur.empty() && std::ispunct(static_cast<unsigned char>(cur.back())) && cur.back() != '-')
                cur.pop_back();
            std::size_t lead = 0;
            while (lead < cur.size() && std::ispunct(static_cast<unsigned char>(cur[lead]))) ++lead;
            cur.erase(0, lead);
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        };
        for (char ch : text) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                flush();
            } else {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            }
        }
        flush();
        return out;
    }

    [[nodiscard]] ImpressionFeature embed(const std::string& text) const override {
        const auto tokens = tokenize(text);
        if (tokens.empty()) throw std::invalid_argument("cannot embed empty text");
        std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
        double total = 0.0;
        int content = 0;
        for (const auto& tok : tokens) {
            const bool filler = template_words().contains(tok);
            const double w = filler ? 0.1 : 1.0 / (1.0 + 0.15 * content++);
            Rng rng(mix_seed(seed_, fnv1a(tok)));
            for (auto& a : acc) a += w * normal(rng);
            total += w;
        }
        ImpressionFeature f;
        double sq = 0.0;
        for (double a : acc) sq += a * a;
        const double scale = sq > 0.0 ? std::sqrt(static_cast<double>(dim_) / sq) : 1.0 / total;
        f.values.reserve(acc.size());
        for (double a : acc) f.values.push_back(static_cast<float>(a * scale));
        return f;
    }

private:
    static const std::unordered_set<std::string>& template_words() {
        static const std::unordered_set<std::string> words = [] {
            std::unordered_set<std::string> w{"impression", "impressions", "is", "are", "and", "respectively"};
            for (const char* o : kOrdinals) w.insert(o);
            return w;
        }();
        return words;
    }

    std::uint64_t seed_;
    int dim_;
};

/// Serves embeddings precomputed by an external CLIP text encoder. Lookup is
/// by exact prompt text; a miss is an error.
class CachedTextEncoder final : public TextEncoderAdapter {
public:
    explicit CachedTextEncoder(const std::filesystem::path& cache_path) : path_(cache_path) {
        std::ifstream in(cache_path);
        if (!in) throw AdapterUnavailable("text embedding cache not found: " + cache_path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const std::string where = cache_path.string() + ":" + std::to_string(line_no) + ": ";
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw AdapterUnavailable(where + "invalid JSON: " + e.what());
            }
            if (!j.contains("prompt") || !j.contains("vector") || !j["vector"].is_array())
                throw AdapterUnavailable(where + "expected \"prompt\" and \"vector\" fields");
            std::vector<float> v;
            for (const auto& x : j["vector"]) {
                const double d = x.get<double>();
                if (!std::isfinite(d)) throw AdapterUnavailable(where + "non-finite vector entry");
                v.push_back(static_cast<float>(d));
            }
            if (dim_ == 0) dim_ = static_cast<int>(v.size());
            if (static_cast<int>(v.size()) != dim_ || dim_ == 0)
                throw AdapterUnavailable(where + "vector length " + std::to_string(v.size()) + " differs from " +
                                         std::to_string(dim_));
            by_prompt_[j["prompt"].get<std::string>()] = std::move(v);
        }
        if (by_prompt_.empty()) throw AdapterUnavailable("text embedding cache is empty: " + cache_path.string());
    }

    [[nodiscard]] std::string name() const override { return "external"; }
    [[nodiscard]] bool deterministic() const override { return true; }
    [[nodiscard]] int dim() const override { return dim_; }
    [[nodiscard]] std::size_t size() const { return by_prompt_.size(); }

    [[nodiscard]] ImpressionFeature embed(const std::string& text) const override {
        const auto it = by_prompt_.find(text);
        if (it == by_prompt_.end())
            throw AdapterUnavailable("prompt not in embedding cache " + path_.string() + ": \"" + text + "\"");
        return {it->second};
    }

private:
    std::filesystem::path path_;
    int dim_ = 0;
    std::unordered_map<std::string, std::vector<float>> by_prompt_;
};

/// One line of an embedding cache file.
inline std::string cache_line(const std::string& font_id, const std::string& prompt, const ImpressionFeature& f) {
    return nlohmann::json{{"font_id", font_id}, {"prompt", prompt}, {"vector", f.values}}.dump();
}

/// Builds an adapter from `{"type": "stub"|"external", "seed"?, "weights_path"?, "cache_path"?}`.
/// The external encoder is consumed through its precomputed cache; in-process
/// CLIP inference is not part of this library.
inline std::unique_ptr<TextEncoderAdapter> make_text_encoder(const nlohmann::json& config) {
    const std::string type = config.value("type", "stub");
    if (type == "stub") return std::make_unique<StubTextEncoder>(config.value("seed", std::uint64_t{0}));
    if (type == "external") {
        std::string path = config.value("cache_path", std::string{});
        if (path.empty()) path = config.value("weights_path", std::string{});
        if (path.empty())
            throw AdapterUnavailable("external text encoder needs cache_path pointing to precomputed embeddings");
        if (std::filesystem::path(path).extension() != ".jsonl")
            throw AdapterUnavailable("'" + path +
                                     "' is not an embedding cache (.jsonl); run scripts/precompute_clip_embeddings.py "
                                     "to produce one from the CLIP weights");
        return std::make_unique<CachedTextEncoder>(path);
    }
    throw std::invalid_argument("unknown text_encoder type '" + type + "'");
}

inline std::unique_ptr<StubTextEncoder> make_stub_adapter(std::uint64_t seed) {
    return std::make_unique<StubTextEncoder>(seed);
}

/// E_tag(prompt). Rejects wrong-length, non-finite, or all-zero output.
inline ImpressionFeature encode_impression(const TextEncoderAdapter& adapter, const Prompt& prompt,
                                           int expected_dim = kFeatureDim) {
    auto f = adapter.embed(prompt.text);
    if (static_cast<int>(f.values.size()) != expected_dim)
        throw AdapterUnavailable(adapter.name() + " encoder returned " + std::to_string(f.values.size()) +
                                 " values, expected " + std::to_string(expected_dim));
    double norm = 0.0;
    for (float v : f.values) {
        if (!std::isfinite(v)) throw AdapterUnavailable(adapter.name() + " encoder returned a non-finite value");
        norm += static_cast<double>(v) * v;
    }
    if (norm == 0.0) throw AdapterUnavailable(adapter.name() + " encoder returned a zero vector");
    return f;
}

}  // namespace fontclip
