#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../common/binary_io.hpp"
#include "../common/hash.hpp"

namespace fontclip {

inline constexpr double kUnitTolerance = 1e-5;

struct LatentPair {
    std::string font_id;
    std::vector<float> image_latent;  ///< Ĩ_n
    std::vector<float> tag_latent;    ///< T̃_n
};

struct ScoredFont {
    std::string font_id;
    double score = 0.0;

    bool operator==(const ScoredFont&) const = default;
};

/// Descending score, ties by ascending font_id.
using RetrievalResult = std::vector<ScoredFont>;

/// Which stored modality a query is scored against.
enum class Side { Image, Tag };

inline const char* side_name(Side s) { return s == Side::Image ? "image" : "tag"; }

/// Immutable exact-search index over both latent modalities. Rows are kept in
/// ascending font_id order so results never depend on insertion order.
class EmbeddingIndex {
public:
    EmbeddingIndex() = default;

    static EmbeddingIndex build(std::vector<LatentPair> pairs, nlohmann::json metadata = nlohmann::json::object()) {
        if (pairs.empty()) throw std::invalid_argument("cannot build an empty index");
        std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.font_id < b.font_id; });
        for (std::size_t i = 1; i < pairs.size(); ++i)
            if (pairs[i].font_id == pairs[i - 1].font_id)
                throw std::invalid_argument("duplicate font_id '" + pairs[i].font_id + "' in index");
        const auto d = pairs.front().image_latent.size();
        if (d == 0) throw std::invalid_argument("latent dimension must be positive");
        EmbeddingIndex idx;
        idx.image_.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(pairs.size()));
        idx.tag_.resizeLike(idx.image_);
        for (std::size_t n = 0; n < pairs.size(); ++n) {
            const auto& p = pairs[n];
            if (p.image_latent.size() != d || p.tag_latent.size() != d)
                throw std::invalid_argument("latent of '" + p.font_id + "' has the wrong dimension");
            for (std::size_t k = 0; k < d; ++k) {
                idx.image_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = p.image_latent[k];
                idx.tag_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = p.tag_latent[k];
            }
            check_unit(idx.image_.col(static_cast<Eigen::Index>(n)), "image latent of '" + p.font_id + "'");
            check_unit(idx.tag_.col(static_cast<Eigen::Index>(n)), "tag latent of '" + p.font_id + "'");
            idx.ids_.push_back(p.font_id);
            idx.position_[p.font_id] = n;
        }
        idx.metadata_ = std::move(metadata);
        return idx;
    }

    [[nodiscard]] std::size_t size() const { return ids_.size(); }
    [[nodiscard]] int dim() const { return static_cast<int>(image_.rows()); }
    [[nodiscard]] const std::vector<std::string>& font_ids() const { return ids_; }
    [[nodiscard]] const nlohmann::json& metadata() const { return metadata_; }

    /// d x N, column n belongs to font_ids()[n].
    [[nodiscard]] const Eigen::MatrixXd& latents(Side side) const { return side == Side::Image ? image_ : tag_; }

    [[nodiscard]] std::optional<std::size_t> position(const std::string& font_id) const {
        const auto it = position_.find(font_id);
        if (it == position_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::vector<float> latent(Side side, const std::string& font_id) const {
        const auto pos = position(font_id);
        if (!pos) throw std::out_of_range("font '" + font_id + "' is not in the index");
        const auto col = latents(side).col(static_cast<Eigen::Index>(*pos));
        std::vector<float> out(static_cast<std::size_t>(col.size()));
        for (Eigen::Index i = 0; i < col.size(); ++i) out[i] = static_cast<float>(col(i));
        return out;
    }

    /// Inner products of a unit query against every stored latent of `side`.
    [[nodiscard]] Eigen::VectorXd scores(Side side, std::span<const float> query) const {
        if (static_cast<int>(query.size()) != dim())
            throw std::invalid_argument("query has " + std::to_string(query.size()) + " values, index dimension is " +
                                        std::to_string(dim()));
        Eigen::VectorXd q(dim());
        for (int i = 0; i < dim(); ++i) q(i) = query[i];
        check_unit(q, "query");
        return latents(side).transpose() * q;
    }

    /// Exact top-k over `side`.
    [[nodiscard]] RetrievalResult query(Side side, std::span<const float> q, std::size_t k) const {
        if (k < 1 || k > size())
            throw std::invalid_argument("k must be in [1, " + std::to_string(size()) + "], got " + std::to_string(k));
        return top_k(scores(side, q), k);
    }

    [[nodiscard]] RetrievalResult query_by_tag_latent(std::span<const float> tag_latent, std::size_t k) const {
        return query(Side::Image, tag_latent, k);
    }
    [[nodiscard]] RetrievalResult query_by_image_latent(std::span<const float> image_latent, std::size_t k) const {
        return query(Side::Tag, image_latent, k);
    }

    /// Ranks a score vector aligned with font_ids().
    [[nodiscard]] RetrievalResult top_k(const Eigen::VectorXd& s, std::size_t k) const {
        std::vector<std::size_t> order(size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Columns are in id order, so the index breaks ties by font_id.
        const auto cmp = [&](std::size_t a, std::size_t b) {
            return s(static_cast<Eigen::Index>(a)) > s(static_cast<Eigen::Index>(b)) ||
                   (s(static_cast<Eigen::Index>(a)) == s(static_cast<Eigen::Index>(b)) && a < b);
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), cmp);
        RetrievalResult out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) out.push_back({ids_[order[i]], s(static_cast<Eigen::Index>(order[i]))});
        return out;
    }

    /// FNV-1a over the serialized payload; stable across save/load.
    [[nodiscard]] std::string content_hash() const { const auto p = payload();
        return hex_digest(Fnv1a{}.update(p.data(), p.size()).digest()); }

    [[nodiscard]] std::vector<std::uint8_t> payload() const {
        ByteWriter w;
        for (const auto* m : {&image_, &tag_})
            for (Eigen::Index n = 0; n < m->cols(); ++n)
                for (Eigen::Index k = 0; k < m->rows(); ++k) w.f32(static_cast<float>((*m)(k, n)));
        for (const auto& id : ids_) w.str(id);
        return w.bytes();
    }

private:
    template <typename Vec>
    static void check_unit(const Vec& v, const std::string& what) {
        const double n = v.norm();
        if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitTolerance)
            throw std::invalid_argument(what + " is not unit-norm (|v| = " + std::to_string(n) + ")");
    }

    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> position_;
    Eigen::MatrixXd image_;
    Eigen::MatrixXd tag_;
    nlohmann::json metadata_;
};

inline constexpr int kIndexFormatVersion = 1;
inline constexpr const char* kIndexMagic = "FCINDEX";

/// Layout: 8-byte magic "FCINDEX\0", u64 LE header length, JSON header, then
/// the payload: N x d float32 image latents (row-major, one row per font),
/// N x d float32 tag latents, and N font ids as u32 LE length + UTF-8 bytes.
/// Rows follow ascending font_id.
inline void save_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
    nlohmann::json header = {{"format_version", kIndexFormatVersion},
                             {"n", index.size()},
                             {"d", index.dim()},
                             {"layout", "image f32[n][d], tag f32[n][d], ids (u32 len, bytes)[n]; little-endian"},
                             {"content_hash", index.content_hash()},
                             {"metadata", index.metadata()}};
    write_file_bytes(path, pack_container(kIndexMagic, header, index.payload()));
}

inline EmbeddingIndex load_index(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const auto c = unpack_container(bytes, kIndexMagic);
    const int version = c.header.value("format_version", -1);
    if (version != kIndexFormatVersion)
        throw FormatError("index format version " + std::to_string(version) + " is not supported");
    const auto n = c.header.at("n").get<std::size_t>();
    const auto d = c.header.at("d").get<std::size_t>();
    ByteReader r(c.payload);
    std::vector<LatentPair> pairs(n);
    for (auto& p : pairs) {
        p.image_latent.resize(d);
        r.f32s(p.image_latent);
    }
    for (auto& p : pairs) {
        p.tag_latent.resize(d);
        r.f32s(p.tag_latent);
    }
    for (auto& p : pairs) p.font_id = r.str();
    if (!r.done()) throw FormatError("trailing bytes after index payload");
    auto index = EmbeddingIndex::build(std::move(pairs), c.header.value("metadata", nlohmann::json::object()));
    if (index.content_hash() != c.header.value("content_hash", std::string{}))
        throw FormatError("index content hash mismatch");
    return index;
}

}  // namespace fontclip
