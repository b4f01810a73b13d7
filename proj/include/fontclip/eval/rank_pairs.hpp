#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "../common/png_io.hpp"

namespace fontclip {

/// Unit-normalized columns, so inner products are cosines.
inline Eigen::MatrixXd cosine_normalized(const Eigen::MatrixXd& features) {
    Eigen::MatrixXd out = features;
    for (Eigen::Index n = 0; n < out.cols(); ++n) {
        const double len = out.col(n).norm();
        if (!(len > 0) || !std::isfinite(len))
            throw std::invalid_argument("feature column " + std::to_string(n) + " cannot be normalized");
        out.col(n) /= len;
    }
    return out;
}

/// One stage of both modalities: d x N matrices of unit columns, columns in
/// the order of `ids`.
struct ModalityLatents {
    Eigen::MatrixXd image;
    Eigen::MatrixXd tag;
};

struct RankPair {
    int image_rank = 0;
    int tag_rank = 0;

    bool operator==(const RankPair&) const = default;
};

/// For query n, the rank of every other item among the N-1 peers (self
/// excluded), by descending similarity with ties to the smaller id.
/// Entry n is 0.
inline std::vector<int> peer_ranks(const Eigen::MatrixXd& unit_columns, const std::vector<std::string>& ids,
                                   std::size_t n) {
    const auto count = static_cast<std::size_t>(unit_columns.cols());
    const Eigen::VectorXd s = unit_columns.transpose() * unit_columns.col(static_cast<Eigen::Index>(n));
    std::vector<std::size_t> order;
    order.reserve(count - 1);
    for (std::size_t m = 0; m < count; ++m)
        if (m != n) order.push_back(m);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = s(static_cast<Eigen::Index>(a));
        const double sb = s(static_cast<Eigen::Index>(b));
        return sa > sb || (sa == sb && ids[a] < ids[b]);
    });
    std::vector<int> rank(count, 0);
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<int>(i + 1);
    return rank;
}

struct RankPairStages {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<RankPair> before;
    std::vector<RankPair> after;
};

namespace detail {

inline void check_stage(const ModalityLatents& m, std::size_t n, const char* what) {
    if (static_cast<std::size_t>(m.image.cols()) != n || static_cast<std::size_t>(m.tag.cols()) != n)
        throw std::invalid_argument(std::string(what) + " stage does not cover every font");
    if (n < 2) throw std::invalid_argument("rank pairs need at least 2 fonts");
}

inline std::vector<RankPair> stage_pairs(const ModalityLatents& m, const std::vector<std::string>& ids,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::vector<RankPair> out;
    out.reserve(pairs.size());
    std::size_t cached = static_cast<std::size_t>(-1);
    std::vector<int> img;
    std::vector<int> tag;
    for (const auto& [n, k] : pairs) {
        if (n != cached) {
            img = peer_ranks(m.image, ids, n);
            tag = peer_ranks(m.tag, ids, n);
            cached = n;
        }
        out.push_back({img[k], tag[k]});
    }
    return out;
}

}  // namespace detail

/// Rank pairs (image-based rank, impression-based rank) of item m for query
/// n at both stages. Both stages go through the same inner-product ranking;
/// pass cosine_normalized raw features as `before`.
inline RankPairStages rank_pairs(const ModalityLatents& before, const ModalityLatents& after,
                                 const std::vector<std::string>& ids,
                                 std::vector<std::pair<std::size_t, std::size_t>> pairs) {
    detail::check_stage(before, ids.size(), "before");
    detail::check_stage(after, ids.size(), "after");
    for (const auto& [n, m] : pairs) {
        if (n == m) throw std::invalid_argument("rank of a font relative to itself is undefined");
        if (n >= ids.size() || m >= ids.size()) throw std::out_of_range("rank pair index out of range");
    }
    RankPairStages out;
    out.before = detail::stage_pairs(before, ids, pairs);
    out.after = detail::stage_pairs(after, ids, pairs);
    out.pairs = std::move(pairs);
    return out;
}

/// Every ordered pair (n, m), n != m.
inline RankPairStages all_rank_pairs(const ModalityLatents& before, const ModalityLatents& after,
                                     const std::vector<std::string>& ids) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(ids.size() * (ids.size() - 1));
    for (std::size_t n = 0; n < ids.size(); ++n)
        for (std::size_t m = 0; m < ids.size(); ++m)
            if (n != m) pairs.emplace_back(n, m);
    return rank_pairs(before, after, ids, std::move(pairs));
}

/// Ranks with ties given their average position (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

/// Pearson correlation; 0 when either side has zero variance.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) throw std::invalid_argument("pearson needs equal, non-empty inputs");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

struct RankPairHistogram {
    int bins = 0;
    int max_rank = 0;
    Eigen::MatrixXi counts;  ///< rows: image-rank bin, cols: impression-rank bin
    double spearman = 0.0;   ///< consistency score
};

/// Linear binning of ranks 1..max_rank into bins x bins cells.
inline RankPairHistogram rank_pair_histogram(const std::vector<RankPair>& pairs, int max_rank, int bins = 50) {
    if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
    if (pairs.empty()) throw std::invalid_argument("histogram needs at least one rank pair");
    if (max_rank < 1) throw std::invalid_argument("max_rank must be positive");
    RankPairHistogram h;
    h.bins = bins;
    h.max_rank = max_rank;
    h.counts = Eigen::MatrixXi::Zero(bins, bins);
    const auto bin = [&](int r) {
        if (r < 1 || r > max_rank) throw std::out_of_range("rank " + std::to_string(r) + " outside [1, max_rank]");
        return std::min(bins - 1, static_cast<int>(static_cast<long long>(r - 1) * bins / max_rank));
    };
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& p : pairs) {
        ++h.counts(bin(p.image_rank), bin(p.tag_rank));
        xs.push_back(p.image_rank);
        ys.push_back(p.tag_rank);
    }
    h.spearman = spearman(xs, ys);
    return h;
}

inline void write_histogram_csv(const std::filesystem::path& path, const RankPairHistogram& h) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# rows: image-rank bins, columns: impression-rank bins, max_rank " << h.max_rank << ", spearman "
        << h.spearman << '\n';
    for (int r = 0; r < h.bins; ++r) {
        for (int c = 0; c < h.bins; ++c) out << (c ? "," : "") << h.counts(r, c);
        out << '\n';
    }
}

/// Grayscale heat map, darker = more pairs (log scale); rank 1 at the top left.
inline void write_histogram_png(const std::filesystem::path& path, const RankPairHistogram& h, int cell = 8) {
    GrayImage img;
    img.width = h.bins * cell;
    img.height = h.bins * cell;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 255);
    const double top = std::log1p(static_cast<double>(std::max(1, h.counts.maxCoeff())));
    for (int r = 0; r < h.bins; ++r)
        for (int c = 0; c < h.bins; ++c) {
            const double v = std::log1p(static_cast<double>(h.counts(r, c))) / top;
            const auto px = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x)
                    img.pixels[static_cast<std::size_t>(r * cell + y) * img.width + c * cell + x] = px;
        }
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// First principal component score of each column.
inline Eigen::VectorXd pc1_scores(const Eigen::MatrixXd& x) {
    if (x.cols() < 3) throw std::invalid_argument("PC1 needs at least 3 samples");
    const Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::MatrixXd centered = x.colwise() - mean;
    const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(x.cols() - 1);
    if (!(cov.trace() > 0)) throw std::invalid_argument("zero-variance modality has no principal component");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::VectorXd v = eig.eigenvectors().col(eig.eigenvalues().size() - 1);
    // Orientation: first non-negligible component positive.
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-12) {
            if (v(i) < 0) v = -v;
            break;
        }
    }
    return centered.transpose() * v;
}

/// |Pearson r| between the PC1 scores of two modalities (PC sign is arbitrary).
inline double pc1_correlation(const Eigen::MatrixXd& image, const Eigen::MatrixXd& tag) {
    if (image.cols() != tag.cols()) throw std::invalid_argument("modalities must cover the same fonts");
    const Eigen::VectorXd a = pc1_scores(image);
    const Eigen::VectorXd b = pc1_scores(tag);
    return std::abs(pearson(std::vector<double>(a.data(), a.data() + a.size()),
                            std::vector<double>(b.data(), b.data() + b.size())));
}

}  // namespace fontclip
