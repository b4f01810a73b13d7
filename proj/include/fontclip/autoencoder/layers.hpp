#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "../common/random.hpp"
#include "tensor.hpp"

namespace fontclip::nn {

/// Trainable tensor with its accumulated gradient.
template <typename Scalar>
struct Param {
    Matrix<Scalar> value;
    Matrix<Scalar> grad;

    Param() = default;
    Param(Eigen::Index rows, Eigen::Index cols)
        : value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
};

template <typename Scalar>
void init_normal(Param<Scalar>& p, double stddev, Rng& rng) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(normal(rng) * stddev);
}

/// Sliding-window geometry shared by im2col/col2im. `image` is the side the
/// kernel slides over, `grid` the side with one column per window.
struct WindowGeometry {
    int channels;
    int image_h;
    int image_w;
    int kernel;
    int stride;
    int pad;
    int grid_h;
    int grid_w;

    static WindowGeometry for_conv(int channels, int h, int w, int kernel, int stride, int pad) {
        return {channels, h, w, kernel, stride, pad, (h + 2 * pad - kernel) / stride + 1,
                (w + 2 * pad - kernel) / stride + 1};
    }
};

/// Rows of the column matrix are ordered (ky, kx, channel), channel fastest.
template <typename Scalar>
Matrix<Scalar> im2col(const FeatureMap<Scalar>& x, const WindowGeometry& g) {
    const Eigen::Index grid = static_cast<Eigen::Index>(g.grid_h) * g.grid_w;
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(g.kernel) * g.kernel * g.channels,
                                               grid * x.batch);
    for (int b = 0; b < x.batch; ++b) {
        for (int oy = 0; oy < g.grid_h; ++oy) {
            for (int ox = 0; ox < g.grid_w; ++ox) {
                const Eigen::Index dst = b * grid + static_cast<Eigen::Index>(oy) * g.grid_w + ox;
                for (int ky = 0; ky < g.kernel; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.image_h) continue;
                    for (int kx = 0; kx < g.kernel; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.image_w) continue;
                        const Eigen::Index src = b * x.pixels() + static_cast<Eigen::Index>(iy) * g.image_w + ix;
                        cols.block(static_cast<Eigen::Index>(ky * g.kernel + kx) * g.channels, dst, g.channels, 1) =
                            x.data.col(src);
                    }
                }
            }
        }
    }
    return cols;
}

/// Adjoint of im2col: scatters columns back onto the image, summing overlaps.
template <typename Scalar>
FeatureMap<Scalar> col2im(const Matrix<Scalar>& cols, const WindowGeometry& g, int batch) {
    FeatureMap<Scalar> x(g.channels, g.image_h, g.image_w, batch);
    const Eigen::Index grid = static_cast<Eigen::Index>(g.grid_h) * g.grid_w;
    for (int b = 0; b < batch; ++b) {
        for (int oy = 0; oy < g.grid_h; ++oy) {
            for (int ox = 0; ox < g.grid_w; ++ox) {
                const Eigen::Index src = b * grid + static_cast<Eigen::Index>(oy) * g.grid_w + ox;
                for (int ky = 0; ky < g.kernel; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.image_h) continue;
                    for (int kx = 0; kx < g.kernel; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.image_w) continue;
                        const Eigen::Index dst = b * x.pixels() + static_cast<Eigen::Index>(iy) * g.image_w + ix;
                        x.data.col(dst) +=
                            cols.block(static_cast<Eigen::Index>(ky * g.kernel + kx) * g.channels, src, g.channels, 1);
                    }
                }
            }
        }
    }
    return x;
}

template <typename Scalar>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int kernel, int stride, int pad, int in_h, int in_w)
        : geom_(WindowGeometry::for_conv(in_c, in_h, in_w, kernel, stride, pad)),
          out_c_(out_c),
          weight(out_c, static_cast<Eigen::Index>(kernel) * kernel * in_c),
          bias(out_c, 1) {}

    void init(Rng& rng) { init_normal(weight, std::sqrt(2.0 / static_cast<double>(weight.value.cols())), rng); }

    [[nodiscard]] FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) const {
        check(x);
        FeatureMap<Scalar> y;
        y.channels = out_c_;
        y.height = geom_.grid_h;
        y.width = geom_.grid_w;
        y.batch = x.batch;
        y.data.noalias() = weight.value * im2col(x, geom_);
        y.data.colwise() += bias.value.col(0);
        return y;
    }

    /// Accumulates parameter gradients; returns dL/dx.
    FeatureMap<Scalar> backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& dy) {
        const Matrix<Scalar> cols = im2col(x, geom_);
        weight.grad.noalias() += dy.data * cols.transpose();
        bias.grad.col(0) += dy.data.rowwise().sum();
        const Matrix<Scalar> dcols = weight.value.transpose() * dy.data;
        return col2im(dcols, geom_, x.batch);
    }

    [[nodiscard]] int out_channels() const { return out_c_; }
    [[nodiscard]] int out_h() const { return geom_.grid_h; }
    [[nodiscard]] int out_w() const { return geom_.grid_w; }

private:
    void check(const FeatureMap<Scalar>& x) const {
        if (x.channels != geom_.channels || x.height != geom_.image_h || x.width != geom_.image_w)
            throw std::invalid_argument("conv input shape mismatch");
    }

    WindowGeometry geom_{};
    int out_c_ = 0;

public:
    Param<Scalar> weight;
    Param<Scalar> bias;
};

/// Transposed convolution, implemented as the adjoint of a strided Conv2d
/// from the (larger) output onto the input grid.
template <typename Scalar>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_c, int out_c, int kernel, int stride, int pad, int in_h, int in_w)
        : in_c_(in_c),
          geom_{out_c, (in_h - 1) * stride - 2 * pad + kernel, (in_w - 1) * stride - 2 * pad + kernel,
                kernel, stride, pad, in_h, in_w},
          weight(in_c, static_cast<Eigen::Index>(kernel) * kernel * out_c),
          bias(out_c, 1) {}

    void init(Rng& rng) {
        // Each output pixel sees in_c * (kernel/stride)^2 taps.
        const double fan_in = static_cast<double>(in_c_) * geom_.kernel * geom_.kernel /
                              (static_cast<double>(geom_.stride) * geom_.stride);
        init_normal(weight, std::sqrt(2.0 / fan_in), rng);
    }

    [[nodiscard]] FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) const {
        if (x.channels != in_c_ || x.height != geom_.grid_h || x.width != geom_.grid_w)
            throw std::invalid_argument("deconv input shape mismatch");
        const Matrix<Scalar> cols = weight.value.transpose() * x.data;
        FeatureMap<Scalar> y = col2im(cols, geom_, x.batch);
        y.data.colwise() += bias.value.col(0);
        return y;
    }

    FeatureMap<Scalar> backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& dy) {
        const Matrix<Scalar> dcols = im2col(dy, geom_);
        weight.grad.noalias() += x.data * dcols.transpose();
        bias.grad.col(0) += dy.data.rowwise().sum();
        FeatureMap<Scalar> dx(in_c_, geom_.grid_h, geom_.grid_w, x.batch);
        dx.data.noalias() = weight.value * dcols;
        return dx;
    }

    [[nodiscard]] int out_channels() const { return geom_.channels; }
    [[nodiscard]] int out_h() const { return geom_.image_h; }
    [[nodiscard]] int out_w() const { return geom_.image_w; }

private:
    int in_c_ = 0;
    WindowGeometry geom_{};

public:
    Param<Scalar> weight;
    Param<Scalar> bias;
};

/// y = W x + b on column batches.
template <typename Scalar>
class Linear {
public:
    Linear() = default;
    Linear(int in, int out) : weight(out, in), bias(out, 1) {}

    void init(Rng& rng, double gain = 1.0) {
        init_normal(weight, gain / std::sqrt(static_cast<double>(weight.value.cols())), rng);
    }

    [[nodiscard]] Matrix<Scalar> forward(const Eigen::Ref<const Matrix<Scalar>>& x) const {
        if (x.rows() != weight.value.cols()) throw std::invalid_argument("linear input size mismatch");
        Matrix<Scalar> y = weight.value * x;
        y.colwise() += bias.value.col(0);
        return y;
    }

    Matrix<Scalar> backward(const Eigen::Ref<const Matrix<Scalar>>& x, const Eigen::Ref<const Matrix<Scalar>>& dy) {
        weight.grad.noalias() += dy * x.transpose();
        bias.grad.col(0) += dy.rowwise().sum();
        return weight.value.transpose() * dy;
    }

    [[nodiscard]] int in_features() const { return static_cast<int>(weight.value.cols()); }
    [[nodiscard]] int out_features() const { return static_cast<int>(weight.value.rows()); }

    Param<Scalar> weight;
    Param<Scalar> bias;
};

// SiLU: x * sigmoid(x). Smooth, which keeps finite-difference checks honest.
template <typename Derived>
auto silu(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) { return v / (S(1) + std::exp(-v)); });
}

template <typename Derived>
auto silu_grad(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) + v * (S(1) - s));
    });
}

template <typename Scalar>
FeatureMap<Scalar> silu(const FeatureMap<Scalar>& x) {
    FeatureMap<Scalar> y = x;
    y.data = silu(x.data);
    return y;
}

/// dL/dx given pre-activation x and upstream dL/dy.
template <typename Scalar>
FeatureMap<Scalar> silu_backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& dy) {
    FeatureMap<Scalar> dx = dy;
    dx.data = dy.data.cwiseProduct(silu_grad(x.data));
    return dx;
}

}  // namespace fontclip::nn
