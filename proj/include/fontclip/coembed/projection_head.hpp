#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "../autoencoder/layers.hpp"
#include "../common/log.hpp"

namespace fontclip {

struct ProjectionHeadConfig {
    int in_dim = 512;
    int hidden_dim = 512;
    int hidden_layers = 2;
    int out_dim = 512;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"in_dim", in_dim}, {"hidden_dim", hidden_dim}, {"hidden_layers", hidden_layers},
                {"out_dim", out_dim}, {"activation", "silu"}, {"output", "l2-normalized"}};
    }

    static ProjectionHeadConfig from_json(const nlohmann::json& j) {
        ProjectionHeadConfig c{j.at("in_dim").get<int>(), j.at("hidden_dim").get<int>(),
                               j.at("hidden_layers").get<int>(), j.at("out_dim").get<int>()};
        c.validate();
        return c;
    }

    void validate() const {
        if (in_dim < 1 || hidden_dim < 1 || hidden_layers < 0 || out_dim < 1)
            throw std::invalid_argument("projection head dimensions must be positive");
    }

    bool operator==(const ProjectionHeadConfig&) const = default;
};

namespace nn {

/// Columns scaled to unit L2 norm. A column that is exactly zero is nudged
/// to a fixed direction first, with a warning.
template <typename Scalar>
Matrix<Scalar> normalize_columns(const Matrix<Scalar>& z, Vector<Scalar>* norms = nullptr) {
    Matrix<Scalar> y = z;
    Vector<Scalar> n(z.cols());
    for (Eigen::Index b = 0; b < z.cols(); ++b) {
        Scalar len = z.col(b).norm();
        if (len == Scalar(0)) {
            log::warn("projection produced a zero vector; perturbing by epsilon");
            y.col(b).setConstant(std::sqrt(std::numeric_limits<Scalar>::epsilon()));
            len = y.col(b).norm();
        }
        y.col(b) /= len;
        n(b) = len;
    }
    if (norms) *norms = n;
    return y;
}

/// MLP with SiLU hidden layers and an L2-normalized linear output.
template <typename Scalar>
class ProjectionHead {
public:
    struct Tape {
        std::vector<Matrix<Scalar>> inputs;  // input of each linear layer (post-activation)
        std::vector<Matrix<Scalar>> pre;     // pre-activation of each hidden layer
        Vector<Scalar> norms;
        Matrix<Scalar> output;
    };

    ProjectionHead() = default;

    explicit ProjectionHead(const ProjectionHeadConfig& config) : config_(config) {
        config.validate();
        int in = config.in_dim;
        for (int l = 0; l < config.hidden_layers; ++l) {
            layers_.emplace_back(in, config.hidden_dim);
            in = config.hidden_dim;
        }
        layers_.emplace_back(in, config.out_dim);
    }

    void init(Rng& rng) {
        for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].init(rng, l + 1 < layers_.size() ? std::sqrt(2.0) : 1.0);
    }

    [[nodiscard]] const ProjectionHeadConfig& config() const { return config_; }

    /// in_dim x B features -> out_dim x B unit columns.
    [[nodiscard]] Matrix<Scalar> forward(const Matrix<Scalar>& x) const { return run(x, nullptr); }
    Matrix<Scalar> forward(const Matrix<Scalar>& x, Tape& tape) const { return run(x, &tape); }

    /// Accumulates parameter gradients; returns dL/dx.
    Matrix<Scalar> backward(const Tape& tape, const Matrix<Scalar>& dy) {
        Matrix<Scalar> g = dy;
        // d(z/|z|) = (dy - y (y . dy)) / |z|
        const Matrix<Scalar> dots = (tape.output.array() * dy.array()).colwise().sum();
        for (Eigen::Index b = 0; b < g.cols(); ++b)
            g.col(b) = (dy.col(b) - tape.output.col(b) * dots(0, b)) / tape.norms(b);
        for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
            g = layers_[l].backward(tape.inputs[l], g);
            if (l > 0) g = g.cwiseProduct(silu_grad(tape.pre[l - 1]));
        }
        return g;
    }

    [[nodiscard]] std::vector<float> project(std::span<const float> feature) const {
        if (static_cast<int>(feature.size()) != config_.in_dim)
            throw std::invalid_argument("feature has " + std::to_string(feature.size()) + " values, head expects " +
                                        std::to_string(config_.in_dim));
        Matrix<Scalar> x(config_.in_dim, 1);
        for (int i = 0; i < config_.in_dim; ++i) {
            if (!std::isfinite(feature[i])) throw std::invalid_argument("feature contains a non-finite value");
            x(i, 0) = static_cast<Scalar>(feature[i]);
        }
        const Matrix<Scalar> y = forward(x);
        std::vector<float> out(static_cast<std::size_t>(y.rows()));
        for (Eigen::Index i = 0; i < y.rows(); ++i) out[i] = static_cast<float>(y(i, 0));
        return out;
    }

    std::vector<Param<Scalar>*> parameters() {
        std::vector<Param<Scalar>*> out;
        for (auto& l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    std::vector<const Param<Scalar>*> parameters() const {
        std::vector<const Param<Scalar>*> out;
        for (auto* p : const_cast<ProjectionHead*>(this)->parameters()) out.push_back(p);
        return out;
    }

    std::vector<Linear<Scalar>>& layers() { return layers_; }

private:
    Matrix<Scalar> run(const Matrix<Scalar>& x, Tape* tape) const {
        if (x.rows() != config_.in_dim) throw std::invalid_argument("projection head input size mismatch");
        if (tape) {
            tape->inputs.clear();
            tape->pre.clear();
        }
        Matrix<Scalar> h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Matrix<Scalar> z = layers_[l].forward(h);
            if (tape) tape->inputs.push_back(std::move(h));
            if (l + 1 < layers_.size()) {
                h = silu(z);
                if (tape) tape->pre.push_back(std::move(z));
            } else {
                h = std::move(z);
            }
        }
        Vector<Scalar> norms;
        Matrix<Scalar> y = normalize_columns(h, &norms);
        if (tape) {
            tape->norms = norms;
            tape->output = y;
        }
        return y;
    }

    ProjectionHeadConfig config_;
    std::vector<Linear<Scalar>> layers_;
};

}  // namespace nn

/// Learnable log-scale τ with exp(τ) capped at clamp_max.
struct Temperature {
    double log_scale = std::log(1.0 / 0.07);
    double clamp_max = 100.0;

    [[nodiscard]] double scale() const { return std::min(std::exp(log_scale), clamp_max); }
    void clamp() { log_scale = std::min(log_scale, std::log(clamp_max)); }
};

}  // namespace fontclip
