#pragma once

#include <cmath>
#include <vector>

#include "layers.hpp"

namespace fontclip::nn {

template <typename Scalar>
class Adam {
public:
    struct Options {
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(std::vector<Param<Scalar>*> params, Options options) : params_(std::move(params)), options_(options) {
        for (auto* p : params_) {
            m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    /// Applies one update from the accumulated gradients.
    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        const auto b1 = static_cast<Scalar>(options_.beta1);
        const auto b2 = static_cast<Scalar>(options_.beta2);
        const auto lr = static_cast<Scalar>(options_.learning_rate * std::sqrt(c2) / c1);
        const auto eps = static_cast<Scalar>(options_.epsilon * std::sqrt(c2));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& g = params_[i]->grad;
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
            params_[i]->value.array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps);
        }
    }

    [[nodiscard]] long steps() const { return t_; }
    [[nodiscard]] const Options& options() const { return options_; }

private:
    std::vector<Param<Scalar>*> params_;
    Options options_;
    std::vector<Matrix<Scalar>> m_;
    std::vector<Matrix<Scalar>> v_;
    long t_ = 0;
};

}  // namespace fontclip::nn
