#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace fontclip {

namespace detail {

inline void check_similarity(const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols() || s.rows() < 1) throw std::invalid_argument("similarity matrix must be square, B >= 1");
    if (!s.allFinite()) throw std::domain_error("similarity matrix contains NaN or Inf");
}

inline Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& s) {
    const Eigen::VectorXd m = s.rowwise().maxCoeff();
    return m.array() + (s.colwise() - m).array().exp().rowwise().sum().log();
}

}  // namespace detail

/// Symmetric cross-entropy over a scaled similarity matrix S̄ (rows: images,
/// columns: tags, matching pairs on the diagonal). Both directions are summed
/// over the batch, not averaged, and the result is their mean.
inline double sce_loss(const Eigen::MatrixXd& scaled) {
    detail::check_similarity(scaled);
    const double diag = scaled.diagonal().sum();
    const double l_img = detail::row_logsumexp(scaled).sum() - diag;
    const double l_tag = detail::row_logsumexp(scaled.transpose()).sum() - diag;
    return 0.5 * (l_img + l_tag);
}

/// dL/dS̄ of sce_loss: (row softmax - I + column softmax - I) / 2.
inline Eigen::MatrixXd sce_loss_gradient(const Eigen::MatrixXd& scaled) {
    detail::check_similarity(scaled);
    const Eigen::Index b = scaled.rows();
    const Eigen::VectorXd row_lse = detail::row_logsumexp(scaled);
    const Eigen::VectorXd col_lse = detail::row_logsumexp(scaled.transpose());
    Eigen::MatrixXd g(b, b);
    for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index i = 0; i < b; ++i)
            g(i, j) = 0.5 * (std::exp(scaled(i, j) - row_lse(i)) + std::exp(scaled(i, j) - col_lse(j)));
    g.diagonal().array() -= 1.0;
    return g;
}

}  // namespace fontclip
