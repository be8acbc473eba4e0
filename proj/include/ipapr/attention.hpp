#pragma once

#include "ipapr/camera.hpp"
#include "ipapr/nn/mlp.hpp"
#include "ipapr/point_scene.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <utility>
#include <vector>

namespace ipapr {

/// Width of the per (point, ray) geometric embedding:
/// point minus ray origin (3), perpendicular displacement (3), distance (1), ray direction (3).
inline constexpr int kGeomDim = 10;

template <typename Scalar>
using GeomEmbedding = Eigen::Matrix<Scalar, kGeomDim, 1>;

/// Perpendicular displacement is measured from the closest point on the ray
/// (treated as a full line) to `position`.
template <typename Scalar>
GeomEmbedding<Scalar> geometric_embedding(const Vec3<Scalar>& position, const Ray<Scalar>& ray) {
    const Vec3<Scalar> rel = position - ray.origin;
    const Vec3<Scalar> perp = rel - rel.dot(ray.direction) * ray.direction;
    GeomEmbedding<Scalar> g;
    g << rel, perp, perp.norm(), ray.direction;
    return g;
}

/// Squared distance from `position` to the ray's line. Written out term by
/// term so the batched path below rounds identically.
template <typename Scalar>
Scalar perpendicular_distance_sq(const Vec3<Scalar>& position, const Ray<Scalar>& ray) {
    const Scalar rx = position.x() - ray.origin.x(), ry = position.y() - ray.origin.y(),
                 rz = position.z() - ray.origin.z();
    const Scalar dx = ray.direction.x(), dy = ray.direction.y(), dz = ray.direction.z();
    const Scalar t = rx * dx + ry * dy + rz * dz;
    const Scalar px = rx - t * dx, py = ry - t * dy, pz = rz - t * dz;
    return px * px + py * py + pz * pz;
}

/// Point positions relative to a shared ray origin, one row per axis.
template <typename Scalar>
struct RelativePoints {
    Eigen::Array<Scalar, 3, Eigen::Dynamic, Eigen::RowMajor> rel;

    RelativePoints(const Matrix<Scalar>& positions, const Vec3<Scalar>& origin) : rel(3, positions.cols()) {
        for (int k = 0; k < 3; ++k) rel.row(k) = positions.row(k).array() - origin[k];
    }

    void distances_sq(const Vec3<Scalar>& dir, Eigen::Array<Scalar, Eigen::Dynamic, 1>& out) const {
        const auto rx = rel.row(0).transpose(), ry = rel.row(1).transpose(), rz = rel.row(2).transpose();
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> t = rx * dir.x() + ry * dir.y() + rz * dir.z();
        const auto px = rx - t * dir.x();
        const auto py = ry - t * dir.y();
        const auto pz = rz - t * dir.z();
        out = px * px + py * py + pz * pz;
    }
};

/// Smallest k entries of `dist` ordered by (distance, index).
template <typename Scalar>
void smallest_k(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& dist, int k, std::vector<Eigen::Index>& out) {
    std::vector<Scalar> best_d(k, std::numeric_limits<Scalar>::infinity());
    out.assign(k, -1);
    for (Eigen::Index i = 0; i < dist.size(); ++i) {
        const Scalar d = dist[i];
        if (!(d < best_d[k - 1]) && out[k - 1] >= 0) continue;
        // indices arrive in ascending order, so an equal distance ranks after existing entries
        int p = k - 1;
        while (p > 0 && (out[p - 1] < 0 || d < best_d[p - 1])) {
            best_d[p] = best_d[p - 1];
            out[p] = out[p - 1];
            --p;
        }
        best_d[p] = d;
        out[p] = i;
    }
}

/// Indices of the k points closest to the ray line, nearest first, ties broken
/// by ascending index.
template <typename Scalar>
std::vector<Eigen::Index> select_topk(const Matrix<Scalar>& positions, const Ray<Scalar>& ray, int k) {
    const Eigen::Index n = positions.cols();
    if (k < 1) throw Error("select_topk: k must be at least 1");
    if (n < k) throw Error("select_topk: scene has " + std::to_string(n) + " points but k = " + std::to_string(k));
    const RelativePoints<Scalar> rel(positions, ray.origin);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> dist;
    rel.distances_sq(ray.direction, dist);
    std::vector<Eigen::Index> out;
    smallest_k(dist, k, out);
    return out;
}

/// softmax(<q, k_i> / sqrt(d_k) + tau_i) over the columns of `keys`.
template <typename Scalar>
Vector<Scalar> attention_weights(const Eigen::Ref<const Vector<Scalar>>& query,
                                 const Eigen::Ref<const Matrix<Scalar>>& keys,
                                 const Eigen::Ref<const Vector<Scalar>>& influence) {
    if (keys.rows() != query.size()) throw ShapeError("attention_weights: key and query widths differ");
    if (keys.cols() != influence.size()) throw ShapeError("attention_weights: one influence per key required");
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(query.size()));
    Vector<Scalar> logits = (keys.transpose() * query) * scale + influence;
    logits.array() = (logits.array() - logits.maxCoeff()).exp();
    return logits / logits.sum();
}

struct AttentionConfig {
    int k = 8;
    int key_dim = 16;
    int albedo_value_dim = 16;
    int shading_value_dim = 16;
    std::vector<int> hidden = {64, 64};
    nn::Activation activation = nn::Activation::LeakyReLU;

    nn::MlpSpec mlp_spec(int in, int out) const {
        nn::MlpSpec spec;
        spec.widths.push_back(in);
        spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
        spec.widths.push_back(out);
        spec.activation = activation;
        return spec;
    }
};

template <typename Scalar>
struct AttentionView;

/// The four embedding MLPs: key (geometry), query (ray direction), and the
/// albedo/shading value MLPs (feature concatenated with geometry).
template <typename Scalar>
struct AttentionModel {
    int k = 8;
    nn::Mlp<Scalar> key;
    nn::Mlp<Scalar> query;
    nn::Mlp<Scalar> albedo_value;
    nn::Mlp<Scalar> shading_value;

    AttentionView<Scalar> view() const;

    AttentionModel zeros_like() const {
        return {k, key.zeros_like(), query.zeros_like(), albedo_value.zeros_like(), shading_value.zeros_like()};
    }

    template <typename Other>
    AttentionModel<Other> cast() const {
        return {k, key.template cast<Other>(), query.template cast<Other>(), albedo_value.template cast<Other>(),
                shading_value.template cast<Other>()};
    }

    template <typename F>
    void for_each_param(F&& f) {
        key.for_each_param("attention/key", f);
        query.for_each_param("attention/query", f);
        albedo_value.for_each_param("attention/albedo_value", f);
        shading_value.for_each_param("attention/shading_value", f);
    }
};

/// Non-owning view so that value MLPs can live in storage shared between scenes.
template <typename Scalar>
struct AttentionView {
    const nn::Mlp<Scalar>& key;
    const nn::Mlp<Scalar>& query;
    const nn::Mlp<Scalar>& albedo_value;
    const nn::Mlp<Scalar>& shading_value;
    int k;

    int key_dim() const { return key.spec.output_width(); }
    AttentionModel<Scalar> zeros_like() const {
        return {k, key.zeros_like(), query.zeros_like(), albedo_value.zeros_like(), shading_value.zeros_like()};
    }
};

template <typename Scalar>
AttentionView<Scalar> AttentionModel<Scalar>::view() const {
    return {key, query, albedo_value, shading_value, k};
}

template <typename Scalar, typename Rng>
AttentionModel<Scalar> init_attention(const AttentionConfig& cfg, int albedo_dim, int shading_dim, Rng& rng) {
    if (cfg.k < 1) throw Error("attention K must be at least 1");
    AttentionModel<Scalar> m;
    m.k = cfg.k;
    m.key = nn::init_mlp<Scalar>(cfg.mlp_spec(kGeomDim, cfg.key_dim), rng);
    m.query = nn::init_mlp<Scalar>(cfg.mlp_spec(3, cfg.key_dim), rng);
    m.albedo_value = nn::init_mlp<Scalar>(cfg.mlp_spec(albedo_dim + kGeomDim, cfg.albedo_value_dim), rng);
    m.shading_value = nn::init_mlp<Scalar>(cfg.mlp_spec(shading_dim + kGeomDim, cfg.shading_value_dim), rng);
    return m;
}

template <typename Scalar>
struct FeatureMaps {
    Image<Scalar> albedo;   // d_albedo channels
    Image<Scalar> shading;  // d_shading channels
};

/// Selected points and their weights for a single ray.
template <typename Scalar>
struct RayAttention {
    std::vector<Eigen::Index> indices;
    Vector<Scalar> weights;
};

template <typename Scalar>
RayAttention<Scalar> ray_attention(const PointScene<Scalar>& scene, const AttentionView<Scalar>& model,
                                   const Ray<Scalar>& ray) {
    RayAttention<Scalar> out;
    out.indices = select_topk(scene.positions, ray, model.k);
    Matrix<Scalar> geom(kGeomDim, model.k);
    Vector<Scalar> tau(model.k);
    for (int s = 0; s < model.k; ++s) {
        geom.col(s) = geometric_embedding<Scalar>(scene.positions.col(out.indices[s]), ray);
        tau[s] = scene.influence[out.indices[s]];
    }
    const Matrix<Scalar> keys = nn::mlp_forward(model.key, geom);
    const Matrix<Scalar> q = nn::mlp_forward(model.query, Matrix<Scalar>(ray.direction));
    out.weights = attention_weights<Scalar>(q.col(0), keys, tau);
    return out;
}

template <typename Scalar>
struct AttentionCache {
    int height = 0;
    int width = 0;
    int k = 0;
    Vec3<Scalar> origin;
    Matrix<Scalar> directions;            // 3 x P
    std::vector<Eigen::Index> selected;   // P * K, pixel-major
    Matrix<Scalar> geom;                  // 10 x PK
    Matrix<Scalar> keys;                  // d_k x PK
    Matrix<Scalar> queries;               // d_k x P
    Matrix<Scalar> weights;               // K x P
    Matrix<Scalar> albedo_values;         // d_albedo x PK
    Matrix<Scalar> shading_values;        // d_shading x PK
    nn::MlpCache<Scalar> key_cache, query_cache, albedo_cache, shading_cache;
};

/// Per pixel: top-K points by perpendicular distance, softmax attention over
/// them, weighted sums of the albedo and shading value embeddings.
template <typename Scalar>
FeatureMaps<Scalar> render_feature_maps(const PointScene<Scalar>& scene, const AttentionView<Scalar>& model,
                                        const Camera& camera, AttentionCache<Scalar>* cache = nullptr) {
    const RayGrid<Scalar> rays = generate_rays<Scalar>(camera);
    const Eigen::Index P = rays.size();
    const int K = model.k;
    const int n_a = scene.albedo_dim(), n_s = scene.shading_dim();
    if (scene.size() < K)
        throw Error("render_feature_maps: scene has " + std::to_string(scene.size()) + " points but K = " +
                    std::to_string(K));

    AttentionCache<Scalar> local;
    AttentionCache<Scalar>& c = cache ? *cache : local;
    c.height = rays.height;
    c.width = rays.width;
    c.k = K;
    c.origin = rays.origin;
    c.directions = rays.directions;
    c.selected.resize(std::size_t(P) * K);
    c.geom.resize(kGeomDim, P * K);

    const RelativePoints<Scalar> rel(scene.positions, rays.origin);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> dist;
    std::vector<Eigen::Index> sel;
    for (Eigen::Index j = 0; j < P; ++j) {
        const Ray<Scalar> ray = rays.ray(j);
        rel.distances_sq(ray.direction, dist);
        smallest_k(dist, K, sel);
        for (int s = 0; s < K; ++s) {
            c.selected[std::size_t(j) * K + s] = sel[s];
            c.geom.col(j * K + s) = geometric_embedding<Scalar>(scene.positions.col(sel[s]), ray);
        }
    }

    c.keys = nn::mlp_forward(model.key, c.geom, cache ? &c.key_cache : nullptr);
    c.queries = nn::mlp_forward(model.query, c.directions, cache ? &c.query_cache : nullptr);

    Matrix<Scalar> albedo_in(n_a + kGeomDim, P * K), shading_in(n_s + kGeomDim, P * K);
    c.weights.resize(K, P);
    Vector<Scalar> tau(K);
    for (Eigen::Index j = 0; j < P; ++j) {
        for (int s = 0; s < K; ++s) {
            const Eigen::Index i = c.selected[std::size_t(j) * K + s];
            tau[s] = scene.influence[i];
            albedo_in.col(j * K + s).head(n_a) = scene.albedo_features.col(i);
            albedo_in.col(j * K + s).tail(kGeomDim) = c.geom.col(j * K + s);
            shading_in.col(j * K + s).head(n_s) = scene.shading_features.col(i);
            shading_in.col(j * K + s).tail(kGeomDim) = c.geom.col(j * K + s);
        }
        c.weights.col(j) = attention_weights<Scalar>(c.queries.col(j), c.keys.middleCols(j * K, K), tau);
    }

    c.albedo_values = nn::mlp_forward(model.albedo_value, albedo_in, cache ? &c.albedo_cache : nullptr);
    c.shading_values = nn::mlp_forward(model.shading_value, shading_in, cache ? &c.shading_cache : nullptr);

    FeatureMaps<Scalar> maps{Image<Scalar>(rays.height, rays.width, int(c.albedo_values.rows())),
                             Image<Scalar>(rays.height, rays.width, int(c.shading_values.rows()))};
    for (Eigen::Index j = 0; j < P; ++j) {
        maps.albedo.data.col(j) = c.albedo_values.middleCols(j * K, K) * c.weights.col(j);
        maps.shading.data.col(j) = c.shading_values.middleCols(j * K, K) * c.weights.col(j);
    }
    return maps;
}

/// Gradients of the feature maps' loss with respect to the point scene
/// (positions, features, influence) and the four MLPs. The top-K selection
/// recorded in `cache` is held fixed.
template <typename Scalar>
void render_feature_maps_backward(const PointScene<Scalar>& scene, const AttentionView<Scalar>& model,
                                  const AttentionCache<Scalar>& c, const FeatureMaps<Scalar>& grad_maps,
                                  PointScene<Scalar>& scene_grad, AttentionModel<Scalar>& model_grad) {
    const int K = c.k;
    const Eigen::Index P = c.directions.cols();
    const int n_a = scene.albedo_dim();
    const int n_s = scene.shading_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(model.key_dim()));

    Matrix<Scalar> d_albedo_values(c.albedo_values.rows(), P * K);
    Matrix<Scalar> d_shading_values(c.shading_values.rows(), P * K);
    Matrix<Scalar> d_keys(c.keys.rows(), P * K);
    Matrix<Scalar> d_queries = Matrix<Scalar>::Zero(c.queries.rows(), P);
    Vector<Scalar> d_logits(K);

    for (Eigen::Index j = 0; j < P; ++j) {
        const auto ga = grad_maps.albedo.data.col(j);
        const auto gs = grad_maps.shading.data.col(j);
        const auto w = c.weights.col(j);
        Vector<Scalar> dw = c.albedo_values.middleCols(j * K, K).transpose() * ga +
                            c.shading_values.middleCols(j * K, K).transpose() * gs;
        d_albedo_values.middleCols(j * K, K) = ga * w.transpose();
        d_shading_values.middleCols(j * K, K) = gs * w.transpose();
        d_logits = w.cwiseProduct(dw.array().matrix() - Vector<Scalar>::Constant(K, w.dot(dw)));
        for (int s = 0; s < K; ++s) {
            const Eigen::Index i = c.selected[std::size_t(j) * K + s];
            scene_grad.influence[i] += d_logits[s];
            d_keys.col(j * K + s) = (d_logits[s] * scale) * c.queries.col(j);
        }
        d_queries.col(j) = c.keys.middleCols(j * K, K) * d_logits * scale;
    }

    Matrix<Scalar> d_geom = nn::mlp_backward(model.key, c.key_cache, d_keys, model_grad.key);
    nn::mlp_backward(model.query, c.query_cache, d_queries, model_grad.query);
    const Matrix<Scalar> d_albedo_in =
        nn::mlp_backward(model.albedo_value, c.albedo_cache, d_albedo_values, model_grad.albedo_value);
    const Matrix<Scalar> d_shading_in =
        nn::mlp_backward(model.shading_value, c.shading_cache, d_shading_values, model_grad.shading_value);
    d_geom += d_albedo_in.bottomRows(kGeomDim);
    d_geom += d_shading_in.bottomRows(kGeomDim);

    for (Eigen::Index j = 0; j < P; ++j) {
        const Vec3<Scalar> dir = c.directions.col(j);
        for (int s = 0; s < K; ++s) {
            const Eigen::Index col = j * K + s;
            const Eigen::Index i = c.selected[std::size_t(j) * K + s];
            scene_grad.albedo_features.col(i) += d_albedo_in.col(col).head(n_a);
            scene_grad.shading_features.col(i) += d_shading_in.col(col).head(n_s);

            const auto g = d_geom.col(col);
            const Vec3<Scalar> d_perp = g.template segment<3>(3);
            Vec3<Scalar> dp = g.template head<3>() + d_perp - dir * dir.dot(d_perp);
            const Scalar dist = c.geom(6, col);
            if (dist > Scalar(0)) dp += (g[6] / dist) * c.geom.col(col).template segment<3>(3);
            scene_grad.positions.col(i) += dp;
        }
    }
}

template <typename Scalar>
PointScene<Scalar> zero_scene_grad(const PointScene<Scalar>& scene) {
    PointScene<Scalar> g;
    g.positions = Matrix<Scalar>::Zero(3, scene.size());
    g.albedo_features = Matrix<Scalar>::Zero(scene.albedo_dim(), scene.size());
    g.shading_features = Matrix<Scalar>::Zero(scene.shading_dim(), scene.size());
    g.influence = Vector<Scalar>::Zero(scene.size());
    g.bounds = scene.bounds;
    return g;
}

}  // namespace ipapr
