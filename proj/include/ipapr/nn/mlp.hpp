#pragma once

#include "ipapr/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ipapr::nn {

enum class Activation { ReLU, LeakyReLU };

inline constexpr double kLeakySlope = 0.2;

/// Elementwise activation of a whole matrix (vectorised).
template <typename Derived>
Matrix<typename Derived::Scalar> activate(Activation act, const Eigen::MatrixBase<Derived>& pre) {
    using Scalar = typename Derived::Scalar;
    if (act == Activation::ReLU) return pre.cwiseMax(Scalar(0));
    return pre.cwiseMax(Scalar(kLeakySlope) * pre);
}

/// grad *= activation'(pre), elementwise.
template <typename Scalar>
void scale_by_activation_grad(Activation act, const Matrix<Scalar>& pre, Matrix<Scalar>& grad) {
    const Scalar low = act == Activation::ReLU ? Scalar(0) : Scalar(kLeakySlope);
    grad = (pre.array() > Scalar(0)).select(grad, low * grad);
}

/// Layer widths input -> hidden... -> output. Hidden layers use `activation`,
/// the last layer is linear.
struct MlpSpec {
    std::vector<int> widths;
    Activation activation = Activation::LeakyReLU;

    void validate() const {
        if (widths.size() < 3) throw Error("MlpSpec needs at least one hidden layer");
        for (int w : widths)
            if (w < 1) throw Error("MlpSpec widths must be positive");
    }
    int input_width() const { return widths.front(); }
    int output_width() const { return widths.back(); }
};

template <typename Scalar>
struct DenseLayer {
    Matrix<Scalar> weight;  // out x in
    Vector<Scalar> bias;    // out
};

template <typename Scalar>
struct Mlp {
    MlpSpec spec;
    std::vector<DenseLayer<Scalar>> layers;

    static Mlp zeros(const MlpSpec& spec) {
        spec.validate();
        Mlp m;
        m.spec = spec;
        for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
            m.layers.push_back({Matrix<Scalar>::Zero(spec.widths[l + 1], spec.widths[l]),
                                Vector<Scalar>::Zero(spec.widths[l + 1])});
        return m;
    }

    Mlp zeros_like() const { return zeros(spec); }

    template <typename Other>
    Mlp<Other> cast() const {
        Mlp<Other> out;
        out.spec = spec;
        for (const auto& l : layers) out.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
        return out;
    }

    /// Visits (name, matrix) for every parameter array in a fixed order.
    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            f(prefix + "/layer" + std::to_string(l) + "/weight", layers[l].weight);
            f(prefix + "/layer" + std::to_string(l) + "/bias", layers[l].bias);
        }
    }
};

/// He fan-in initialization with zero biases.
template <typename Scalar, typename Rng>
Mlp<Scalar> init_mlp(const MlpSpec& spec, Rng& rng) {
    Mlp<Scalar> m = Mlp<Scalar>::zeros(spec);
    for (auto& layer : m.layers) {
        const double gain = spec.activation == Activation::ReLU ? 2.0 : 2.0 / (1.0 + kLeakySlope * kLeakySlope);
        std::normal_distribution<double> normal(0.0, std::sqrt(gain / double(layer.weight.cols())));
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = Scalar(normal(rng));
    }
    return m;
}

/// Activations kept by the forward pass for the backward pass.
template <typename Scalar>
struct MlpCache {
    std::vector<Matrix<Scalar>> inputs;  // input of each layer
    std::vector<Matrix<Scalar>> pre;     // pre-activation of each hidden layer
};

/// Columns of `input` are samples.
template <typename Scalar>
Matrix<Scalar> mlp_forward(const Mlp<Scalar>& mlp, const Matrix<Scalar>& input, MlpCache<Scalar>* cache = nullptr) {
    if (input.rows() != mlp.spec.input_width())
        throw ShapeError("mlp_forward: input width " + std::to_string(input.rows()) + " != " +
                         std::to_string(mlp.spec.input_width()));
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Matrix<Scalar> x = input;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& layer = mlp.layers[l];
        Matrix<Scalar> z = layer.weight * x;
        z.colwise() += layer.bias;
        if (cache) cache->inputs.push_back(std::move(x));
        if (l + 1 == mlp.layers.size()) return z;
        if (cache) cache->pre.push_back(z);
        x = activate(mlp.spec.activation, z);
    }
    return x;
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
template <typename Scalar>
Matrix<Scalar> mlp_backward(const Mlp<Scalar>& mlp, const MlpCache<Scalar>& cache, const Matrix<Scalar>& grad_output,
                            Mlp<Scalar>& grad) {
    Matrix<Scalar> g = grad_output;
    const Activation act = mlp.spec.activation;
    for (std::size_t l = mlp.layers.size(); l-- > 0;) {
        if (l + 1 < mlp.layers.size()) scale_by_activation_grad(act, cache.pre[l], g);
        grad.layers[l].weight.noalias() += g * cache.inputs[l].transpose();
        grad.layers[l].bias += g.rowwise().sum();
        g = mlp.layers[l].weight.transpose() * g;
    }
    return g;
}

}  // namespace ipapr::nn
