#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>

namespace fontclip::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of C x H x W feature maps stored as a C x (B*H*W) matrix. Column
/// b*H*W + y*W + x holds every channel of pixel (y, x) of sample b, so one
/// sample's map is a contiguous C*H*W block (channel fastest).
template <typename Scalar>
struct FeatureMap {
    Matrix<Scalar> data;
    int channels = 0;
    int height = 0;
    int width = 0;
    int batch = 0;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, int b)
        : data(Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(b) * h * w)), channels(c), height(h), width(w), batch(b) {}

    [[nodiscard]] Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }

    /// Flattened (C*H*W) x B view, one column per sample.
    [[nodiscard]] Eigen::Map<const Matrix<Scalar>> flat() const {
        return {data.data(), static_cast<Eigen::Index>(channels) * height * width, batch};
    }
    [[nodiscard]] Eigen::Map<Matrix<Scalar>> flat() {
        return {data.data(), static_cast<Eigen::Index>(channels) * height * width, batch};
    }

    static FeatureMap from_flat(const Matrix<Scalar>& flat, int c, int h, int w) {
        if (flat.rows() != static_cast<Eigen::Index>(c) * h * w)
            throw std::invalid_argument("flat tensor does not match feature-map shape");
        FeatureMap m(c, h, w, static_cast<int>(flat.cols()));
        m.flat() = flat;
        return m;
    }
};

}  // namespace fontclip::nn
