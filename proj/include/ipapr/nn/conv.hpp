#pragma once

#include "ipapr/core.hpp"

#include <cmath>
#include <random>

namespace ipapr::nn {

/// Stride-1 convolution with zero "same" padding. Kernel size 1 or 3.
/// Weight columns are ordered tap-major: column (tap * in_channels + c).
template <typename Scalar>
struct Conv2d {
    int kernel = 3;
    Matrix<Scalar> weight;  // out x (in * kernel * kernel)
    Vector<Scalar> bias;    // out

    int in_channels() const { return int(weight.cols()) / (kernel * kernel); }
    int out_channels() const { return int(weight.rows()); }

    static Conv2d zeros(int in, int out, int kernel) {
        return {kernel, Matrix<Scalar>::Zero(out, in * kernel * kernel), Vector<Scalar>::Zero(out)};
    }

    template <typename Other>
    Conv2d<Other> cast() const {
        return {kernel, weight.template cast<Other>(), bias.template cast<Other>()};
    }
};

template <typename Scalar, typename Rng>
void he_init(Conv2d<Scalar>& conv, double gain, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / double(conv.weight.cols())));
    for (Eigen::Index j = 0; j < conv.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < conv.weight.rows(); ++i) conv.weight(i, j) = Scalar(normal(rng));
    conv.bias.setZero();
}

/// Unfolds the 3x3 neighbourhood of every pixel into one column.
template <typename Scalar>
Matrix<Scalar> im2col3(const Image<Scalar>& in) {
    const int C = in.channels(), H = in.height, W = in.width;
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(Eigen::Index(C) * 9, in.pixels());
    for (int tap = 0; tap < 9; ++tap) {
        const int dy = tap / 3 - 1, dx = tap % 3 - 1;
        for (int r = 0; r < H; ++r) {
            const int sr = r + dy;
            if (sr < 0 || sr >= H) continue;
            for (int c = 0; c < W; ++c) {
                const int sc = c + dx;
                if (sc < 0 || sc >= W) continue;
                cols.block(Eigen::Index(tap) * C, in.index(r, c), C, 1) = in.data.col(in.index(sr, sc));
            }
        }
    }
    return cols;
}

/// Adjoint of im2col3.
template <typename Scalar>
Image<Scalar> col2im3(const Matrix<Scalar>& cols, int channels, int height, int width) {
    Image<Scalar> out(height, width, channels);
    for (int tap = 0; tap < 9; ++tap) {
        const int dy = tap / 3 - 1, dx = tap % 3 - 1;
        for (int r = 0; r < height; ++r) {
            const int sr = r + dy;
            if (sr < 0 || sr >= height) continue;
            for (int c = 0; c < width; ++c) {
                const int sc = c + dx;
                if (sc < 0 || sc >= width) continue;
                out.data.col(out.index(sr, sc)) += cols.block(Eigen::Index(tap) * channels, out.index(r, c), channels, 1);
            }
        }
    }
    return out;
}

/// Returns the pre-activation output. `unfolded` receives the im2col matrix
/// (or the input itself for 1x1 kernels) for the backward pass.
template <typename Scalar>
Image<Scalar> conv_forward(const Conv2d<Scalar>& conv, const Image<Scalar>& in, Matrix<Scalar>* unfolded = nullptr) {
    if (in.channels() != conv.in_channels())
        throw ShapeError("conv_forward: got " + std::to_string(in.channels()) + " channels, expected " +
                         std::to_string(conv.in_channels()));
    Image<Scalar> out;
    out.height = in.height;
    out.width = in.width;
    if (conv.kernel == 1) {
        out.data = conv.weight * in.data;
        if (unfolded) *unfolded = in.data;
    } else {
        Matrix<Scalar> cols = im2col3(in);
        out.data = conv.weight * cols;
        if (unfolded) *unfolded = std::move(cols);
    }
    out.data.colwise() += conv.bias;
    return out;
}

/// Accumulates weight/bias gradients and returns the input gradient.
template <typename Scalar>
Image<Scalar> conv_backward(const Conv2d<Scalar>& conv, const Matrix<Scalar>& unfolded, const Image<Scalar>& grad_out,
                            Conv2d<Scalar>& grad) {
    grad.weight.noalias() += grad_out.data * unfolded.transpose();
    grad.bias += grad_out.data.rowwise().sum();
    Matrix<Scalar> dcols = conv.weight.transpose() * grad_out.data;
    if (conv.kernel == 1) {
        Image<Scalar> g;
        g.height = grad_out.height;
        g.width = grad_out.width;
        g.data = std::move(dcols);
        return g;
    }
    return col2im3(dcols, conv.in_channels(), grad_out.height, grad_out.width);
}

/// 2x2 average pooling; height and width must be even.
template <typename Scalar>
Image<Scalar> avg_pool2(const Image<Scalar>& in) {
    Image<Scalar> out(in.height / 2, in.width / 2, in.channels());
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c)
            out.data.col(out.index(r, c)) =
                Scalar(0.25) * (in.data.col(in.index(2 * r, 2 * c)) + in.data.col(in.index(2 * r, 2 * c + 1)) +
                                in.data.col(in.index(2 * r + 1, 2 * c)) + in.data.col(in.index(2 * r + 1, 2 * c + 1)));
    return out;
}

template <typename Scalar>
Image<Scalar> avg_pool2_backward(const Image<Scalar>& grad_out) {
    Image<Scalar> g(grad_out.height * 2, grad_out.width * 2, grad_out.channels());
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) g.data.col(g.index(r, c)) = Scalar(0.25) * grad_out.data.col(grad_out.index(r / 2, c / 2));
    return g;
}

namespace detail {
// Source taps of output index o under 2x bilinear upsampling with half-pixel
// centers: sample position (o + 0.5) / 2 - 0.5, edges clamped.
inline void upsample_taps(int o, int n, int& i0, int& i1, double& w0, double& w1) {
    const int i = o / 2;
    if (o % 2 == 0) {
        i0 = i;
        i1 = i > 0 ? i - 1 : 0;
    } else {
        i0 = i;
        i1 = i + 1 < n ? i + 1 : n - 1;
    }
    w0 = 0.75;
    w1 = 0.25;
}
}  // namespace detail

template <typename Scalar>
Image<Scalar> upsample2(const Image<Scalar>& in) {
    Image<Scalar> out(in.height * 2, in.width * 2, in.channels());
    for (int r = 0; r < out.height; ++r) {
        int r0, r1;
        double wr0, wr1;
        detail::upsample_taps(r, in.height, r0, r1, wr0, wr1);
        for (int c = 0; c < out.width; ++c) {
            int c0, c1;
            double wc0, wc1;
            detail::upsample_taps(c, in.width, c0, c1, wc0, wc1);
            out.data.col(out.index(r, c)) = Scalar(wr0 * wc0) * in.data.col(in.index(r0, c0)) +
                                            Scalar(wr0 * wc1) * in.data.col(in.index(r0, c1)) +
                                            Scalar(wr1 * wc0) * in.data.col(in.index(r1, c0)) +
                                            Scalar(wr1 * wc1) * in.data.col(in.index(r1, c1));
        }
    }
    return out;
}

template <typename Scalar>
Image<Scalar> upsample2_backward(const Image<Scalar>& grad_out) {
    Image<Scalar> g(grad_out.height / 2, grad_out.width / 2, grad_out.channels());
    for (int r = 0; r < grad_out.height; ++r) {
        int r0, r1;
        double wr0, wr1;
        detail::upsample_taps(r, g.height, r0, r1, wr0, wr1);
        for (int c = 0; c < grad_out.width; ++c) {
            int c0, c1;
            double wc0, wc1;
            detail::upsample_taps(c, g.width, c0, c1, wc0, wc1);
            const auto col = grad_out.data.col(grad_out.index(r, c));
            g.data.col(g.index(r0, c0)) += Scalar(wr0 * wc0) * col;
            g.data.col(g.index(r0, c1)) += Scalar(wr0 * wc1) * col;
            g.data.col(g.index(r1, c0)) += Scalar(wr1 * wc0) * col;
            g.data.col(g.index(r1, c1)) += Scalar(wr1 * wc1) * col;
        }
    }
    return g;
}

}  // namespace ipapr::nn
