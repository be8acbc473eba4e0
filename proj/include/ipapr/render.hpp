#pragma once

#include "ipapr/attention.hpp"
#include "ipapr/nn/unet.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace ipapr {

inline constexpr double kLogEps = 1e-3;

/// ln(x + 1e-3). Inputs must lie in [-1e-6, 1 + 1e-6].
template <typename Scalar>
Image<Scalar> log_encode(const Image<Scalar>& linear, double eps = kLogEps) {
    if (linear.data.size() > 0 &&
        (!(linear.data.minCoeff() >= Scalar(-1e-6)) || !(linear.data.maxCoeff() <= Scalar(1.0 + 1e-6))))
        throw Error("log_encode: input outside [0, 1]");
    Image<Scalar> out = linear;
    out.data = (linear.data.array() + Scalar(eps)).log();
    return out;
}

/// exp(y) - 1e-3 clamped to [0, 1].
template <typename Scalar>
Image<Scalar> log_decode(const Image<Scalar>& encoded, double eps = kLogEps) {
    Image<Scalar> out = encoded;
    out.data = (encoded.data.array().exp() - Scalar(eps)).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    return out;
}

template <typename Scalar>
struct DecoderView;

/// Albedo decoder consumes the albedo feature map; the colour decoder consumes
/// albedo and shading feature maps stacked along channels.
template <typename Scalar>
struct DecoderPair {
    nn::UNet<Scalar> albedo;
    nn::UNet<Scalar> color;

    DecoderView<Scalar> view() const;
    DecoderPair zeros_like() const { return {albedo.zeros_like(), color.zeros_like()}; }

    template <typename Other>
    DecoderPair<Other> cast() const {
        return {albedo.template cast<Other>(), color.template cast<Other>()};
    }

    template <typename F>
    void for_each_param(F&& f) {
        albedo.for_each_param("decoder/albedo", f);
        color.for_each_param("decoder/color", f);
    }
};

template <typename Scalar>
struct DecoderView {
    const nn::UNet<Scalar>& albedo;
    const nn::UNet<Scalar>& color;
    DecoderPair<Scalar> zeros_like() const { return {albedo.zeros_like(), color.zeros_like()}; }
};

template <typename Scalar>
DecoderView<Scalar> DecoderPair<Scalar>::view() const {
    return {albedo, color};
}

struct ModelConfig {
    AttentionConfig attention;
    int unet_depth = 3;
    int unet_base_width = 32;
    int albedo_feature_dim = kDefaultFeatureDim;
    int shading_feature_dim = kDefaultFeatureDim;
};

/// Point scene, attention MLPs, and both decoders: everything one scene learns.
template <typename Scalar>
struct Model {
    PointScene<Scalar> scene;
    AttentionModel<Scalar> attention;
    DecoderPair<Scalar> decoders;

    Model zeros_like() const { return {zero_scene_grad(scene), attention.zeros_like(), decoders.zeros_like()}; }

    template <typename Other>
    Model<Other> cast() const {
        return {scene.template cast<Other>(), attention.template cast<Other>(), decoders.template cast<Other>()};
    }

    /// Visits (name, group, array) for every learnable array in a fixed order.
    template <typename F>
    void for_each_param(F&& f) {
        f("scene/positions", "points", scene.positions);
        f("scene/albedo_features", "features", scene.albedo_features);
        f("scene/shading_features", "features", scene.shading_features);
        f("scene/influence", "influence", scene.influence);
        attention.for_each_param([&](const std::string& name, auto& a) { f(name, "mlps", a); });
        decoders.for_each_param([&](const std::string& name, auto& a) { f(name, "decoders", a); });
    }
};

template <typename Scalar>
DecoderPair<Scalar> make_decoders(const ModelConfig& cfg, std::mt19937_64& rng) {
    nn::UNetSpec albedo_spec;
    albedo_spec.in_channels = cfg.attention.albedo_value_dim;
    albedo_spec.out_channels = 3;
    albedo_spec.depth = cfg.unet_depth;
    albedo_spec.base_width = cfg.unet_base_width;
    albedo_spec.activation = cfg.attention.activation;
    nn::UNetSpec color_spec = albedo_spec;
    color_spec.in_channels = cfg.attention.albedo_value_dim + cfg.attention.shading_value_dim;
    DecoderPair<Scalar> d;
    d.albedo = nn::init_unet<Scalar>(albedo_spec, rng);
    d.color = nn::init_unet<Scalar>(color_spec, rng);
    return d;
}

/// Fresh model: random points in `bounds`, He-initialised MLPs and decoders.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& cfg, Eigen::Index num_points, const Bounds& bounds, std::uint64_t seed) {
    Model<Scalar> m;
    m.scene = init_scene<Scalar>(num_points, bounds, seed, cfg.albedo_feature_dim, cfg.shading_feature_dim);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    m.attention = init_attention<Scalar>(cfg.attention, cfg.albedo_feature_dim, cfg.shading_feature_dim, rng);
    m.decoders = make_decoders<Scalar>(cfg, rng);
    return m;
}

/// Both images are in the log domain.
template <typename Scalar>
struct RenderOutput {
    Image<Scalar> color;
    Image<Scalar> albedo;

    Image<Scalar> color_linear(double eps = kLogEps) const { return log_decode(color, eps); }
    Image<Scalar> albedo_linear(double eps = kLogEps) const { return log_decode(albedo, eps); }
};

template <typename Scalar>
struct RenderCache {
    AttentionCache<Scalar> attention;
    nn::UNetCache<Scalar> albedo_decoder;
    nn::UNetCache<Scalar> color_decoder;
    FeatureMaps<Scalar> maps;
};

template <typename Scalar>
Image<Scalar> stack_channels(const Image<Scalar>& a, const Image<Scalar>& b) {
    return nn::detail::concat_channels(a, b);
}

template <typename Scalar>
RenderOutput<Scalar> render_view(const PointScene<Scalar>& scene, const AttentionView<Scalar>& attention,
                                 const DecoderView<Scalar>& decoders, const Camera& camera,
                                 RenderCache<Scalar>* cache = nullptr) {
    decoders.albedo.spec.check_resolution(camera.height, camera.width);
    decoders.color.spec.check_resolution(camera.height, camera.width);
    FeatureMaps<Scalar> maps =
        render_feature_maps(scene, attention, camera, cache ? &cache->attention : nullptr);
    RenderOutput<Scalar> out;
    out.albedo = nn::unet_forward(decoders.albedo, maps.albedo, cache ? &cache->albedo_decoder : nullptr);
    out.color = nn::unet_forward(decoders.color, stack_channels(maps.albedo, maps.shading),
                                 cache ? &cache->color_decoder : nullptr);
    if (cache) cache->maps = std::move(maps);
    return out;
}

template <typename Scalar>
RenderOutput<Scalar> render_view(const Model<Scalar>& model, const Camera& camera,
                                 RenderCache<Scalar>* cache = nullptr) {
    return render_view(model.scene, model.attention.view(), model.decoders.view(), camera, cache);
}

/// Backpropagates log-domain image gradients to every learnable array.
/// The returned Model holds gradients, laid out like the model itself.
template <typename Scalar>
Model<Scalar> render_view_backward(const PointScene<Scalar>& scene, const AttentionView<Scalar>& attention,
                                   const DecoderView<Scalar>& decoders, const RenderCache<Scalar>& cache,
                                   const Image<Scalar>& grad_color, const Image<Scalar>& grad_albedo) {
    Model<Scalar> grad{zero_scene_grad(scene), attention.zeros_like(), decoders.zeros_like()};
    const Image<Scalar> d_albedo_map =
        nn::unet_backward(decoders.albedo, cache.albedo_decoder, grad_albedo, grad.decoders.albedo);
    const Image<Scalar> d_stacked = nn::unet_backward(decoders.color, cache.color_decoder, grad_color, grad.decoders.color);
    const int da = cache.maps.albedo.channels();
    FeatureMaps<Scalar> d_maps;
    d_maps.albedo = nn::detail::rows_of(d_stacked, 0, da);
    d_maps.albedo.data += d_albedo_map.data;
    d_maps.shading = nn::detail::rows_of(d_stacked, da, d_stacked.channels() - da);
    render_feature_maps_backward(scene, attention, cache.attention, d_maps, grad.scene, grad.attention);
    return grad;
}

template <typename Scalar>
Model<Scalar> render_view_backward(const Model<Scalar>& model, const RenderCache<Scalar>& cache,
                                   const Image<Scalar>& grad_color, const Image<Scalar>& grad_albedo) {
    return render_view_backward(model.scene, model.attention.view(), model.decoders.view(), cache, grad_color,
                                grad_albedo);
}

}  // namespace ipapr
