#pragma once

#include "ipapr/nn/conv.hpp"
#include "ipapr/nn/mlp.hpp"

#include <string>
#include <vector>

namespace ipapr::nn {

/// Encoder/decoder with concatenation skips. Level l has base_width * 2^l
/// channels; the bottleneck sits at level `depth`. Downsampling is 2x2 average
/// pooling, upsampling is bilinear, and a final 1x1 convolution projects to
/// `out_channels` with no activation.
struct UNetSpec {
    int in_channels = 32;
    int out_channels = 3;
    int depth = 3;
    int base_width = 32;
    Activation activation = Activation::LeakyReLU;

    void validate() const {
        if (in_channels < 1 || out_channels < 1) throw Error("UNetSpec channels must be positive");
        if (depth < 1) throw Error("UNetSpec depth must be at least 1");
        if (base_width < 1) throw Error("UNetSpec base width must be positive");
    }
    int width_at(int level) const { return base_width << level; }
    int divisor() const { return 1 << depth; }

    /// Throws when the resolution cannot be halved `depth` times.
    void check_resolution(int height, int width) const {
        const int d = divisor();
        if (height % d != 0 || width % d != 0) {
            const int pad_h = (d - height % d) % d, pad_w = (d - width % d) % d;
            throw ShapeError("U-Net of depth " + std::to_string(depth) + " needs H and W divisible by " +
                             std::to_string(d) + "; " + std::to_string(height) + "x" + std::to_string(width) +
                             " needs padding of " + std::to_string(pad_h) + " rows and " + std::to_string(pad_w) +
                             " columns");
        }
    }
};

/// Convolutions in evaluation order: two per encoder level, two for the
/// bottleneck, two per decoder level (deepest first), then the 1x1 head.
template <typename Scalar>
struct UNet {
    UNetSpec spec;
    std::vector<Conv2d<Scalar>> convs;

    static UNet zeros(const UNetSpec& spec) {
        spec.validate();
        UNet net;
        net.spec = spec;
        int in = spec.in_channels;
        for (int l = 0; l <= spec.depth; ++l) {
            const int w = spec.width_at(l);
            net.convs.push_back(Conv2d<Scalar>::zeros(in, w, 3));
            net.convs.push_back(Conv2d<Scalar>::zeros(w, w, 3));
            in = w;
        }
        for (int l = spec.depth - 1; l >= 0; --l) {
            const int w = spec.width_at(l);
            net.convs.push_back(Conv2d<Scalar>::zeros(spec.width_at(l + 1) + w, w, 3));
            net.convs.push_back(Conv2d<Scalar>::zeros(w, w, 3));
        }
        net.convs.push_back(Conv2d<Scalar>::zeros(spec.base_width, spec.out_channels, 1));
        return net;
    }

    UNet zeros_like() const { return zeros(spec); }

    Conv2d<Scalar>& head() { return convs.back(); }

    template <typename Other>
    UNet<Other> cast() const {
        UNet<Other> out;
        out.spec = spec;
        for (const auto& c : convs) out.convs.push_back(c.template cast<Other>());
        return out;
    }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < convs.size(); ++i) {
            f(prefix + "/conv" + std::to_string(i) + "/weight", convs[i].weight);
            f(prefix + "/conv" + std::to_string(i) + "/bias", convs[i].bias);
        }
    }
};

template <typename Scalar, typename Rng>
UNet<Scalar> init_unet(const UNetSpec& spec, Rng& rng) {
    UNet<Scalar> net = UNet<Scalar>::zeros(spec);
    const double gain = spec.activation == Activation::ReLU ? 2.0 : 2.0 / (1.0 + kLeakySlope * kLeakySlope);
    for (std::size_t i = 0; i + 1 < net.convs.size(); ++i) he_init(net.convs[i], gain, rng);
    he_init(net.convs.back(), 1.0, rng);
    return net;
}

template <typename Scalar>
struct UNetCache {
    std::vector<Matrix<Scalar>> unfolded;  // per conv
    std::vector<Matrix<Scalar>> pre;       // per activated conv
    std::vector<int> skip_channels;
    int height = 0;
    int width = 0;
};

namespace detail {

template <typename Scalar>
Image<Scalar> activate_image(Activation act, const Image<Scalar>& pre) {
    Image<Scalar> out;
    out.height = pre.height;
    out.width = pre.width;
    out.data = activate(act, pre.data);
    return out;
}

template <typename Scalar>
Image<Scalar> concat_channels(const Image<Scalar>& a, const Image<Scalar>& b) {
    Image<Scalar> out(a.height, a.width, a.channels() + b.channels());
    out.data.topRows(a.channels()) = a.data;
    out.data.bottomRows(b.channels()) = b.data;
    return out;
}

template <typename Scalar>
Image<Scalar> rows_of(const Image<Scalar>& img, int first, int count) {
    Image<Scalar> out;
    out.height = img.height;
    out.width = img.width;
    out.data = img.data.middleRows(first, count);
    return out;
}

}  // namespace detail

template <typename Scalar>
Image<Scalar> unet_forward(const UNet<Scalar>& net, const Image<Scalar>& input, UNetCache<Scalar>* cache = nullptr) {
    const UNetSpec& spec = net.spec;
    if (input.channels() != spec.in_channels)
        throw ShapeError("unet_forward: got " + std::to_string(input.channels()) + " channels, expected " +
                         std::to_string(spec.in_channels));
    spec.check_resolution(input.height, input.width);
    if (cache) {
        cache->unfolded.assign(net.convs.size(), {});
        cache->pre.clear();
        cache->skip_channels.clear();
        cache->height = input.height;
        cache->width = input.width;
    }

    std::size_t ci = 0;
    auto conv_act = [&](const Image<Scalar>& x) {
        Image<Scalar> pre = conv_forward(net.convs[ci], x, cache ? &cache->unfolded[ci] : nullptr);
        ++ci;
        Image<Scalar> y = detail::activate_image(spec.activation, pre);
        if (cache) cache->pre.push_back(std::move(pre.data));
        return y;
    };

    std::vector<Image<Scalar>> skips;
    Image<Scalar> x = input;
    for (int l = 0; l < spec.depth; ++l) {
        x = conv_act(conv_act(x));
        skips.push_back(x);
        if (cache) cache->skip_channels.push_back(x.channels());
        x = avg_pool2(x);
    }
    x = conv_act(conv_act(x));
    for (int l = spec.depth - 1; l >= 0; --l) {
        x = detail::concat_channels(upsample2(x), skips[l]);
        x = conv_act(conv_act(x));
    }
    return conv_forward(net.convs[ci], x, cache ? &cache->unfolded[ci] : nullptr);
}

/// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
template <typename Scalar>
Image<Scalar> unet_backward(const UNet<Scalar>& net, const UNetCache<Scalar>& cache, const Image<Scalar>& grad_output,
                            UNet<Scalar>& grad) {
    const UNetSpec& spec = net.spec;
    const Activation act = spec.activation;
    std::size_t ci = net.convs.size() - 1;
    std::size_t pi = cache.pre.size();

    auto back_conv_act = [&](Image<Scalar> g) {
        --ci;
        --pi;
        scale_by_activation_grad(act, cache.pre[pi], g.data);
        return conv_backward(net.convs[ci], cache.unfolded[ci], g, grad.convs[ci]);
    };

    Image<Scalar> g = conv_backward(net.convs[ci], cache.unfolded[ci], grad_output, grad.convs[ci]);
    std::vector<Image<Scalar>> skip_grads(spec.depth);
    for (int l = 0; l < spec.depth; ++l) {
        g = back_conv_act(back_conv_act(g));
        const int up_channels = spec.width_at(l + 1);
        skip_grads[l] = detail::rows_of(g, up_channels, g.channels() - up_channels);
        g = upsample2_backward(detail::rows_of(g, 0, up_channels));
    }
    g = back_conv_act(back_conv_act(g));
    for (int l = spec.depth - 1; l >= 0; --l) {
        g = avg_pool2_backward(g);
        g.data += skip_grads[l].data;
        g = back_conv_act(back_conv_act(g));
    }
    return g;
}

}  // namespace ipapr::nn
