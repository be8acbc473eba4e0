#pragma once

#include "ipapr/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace ipapr {

inline constexpr int kDefaultFeatureDim = 32;
inline constexpr double kFeatureInitStd = 0.1;

/// Learnable point cloud. Column i of each matrix belongs to point i.
template <typename Scalar>
struct PointScene {
    Matrix<Scalar> positions;        // 3 x N
    Matrix<Scalar> albedo_features;  // n x N
    Matrix<Scalar> shading_features; // m x N
    Vector<Scalar> influence;        // N
    Bounds bounds;
    std::uint64_t version_id = 0;
    // Nonempty when this scene was trained jointly with another through shared value
    // MLPs and albedo decoder; both scenes then carry the same id.
    std::string bundle_id;

    Eigen::Index size() const { return positions.cols(); }
    int albedo_dim() const { return int(albedo_features.rows()); }
    int shading_dim() const { return int(shading_features.rows()); }

    void validate(int min_points = 1) const {
        const Eigen::Index n = size();
        if (n < min_points)
            throw Error("point scene has " + std::to_string(n) + " points, need at least " + std::to_string(min_points));
        if (positions.rows() != 3 || albedo_features.cols() != n || shading_features.cols() != n ||
            influence.size() != n)
            throw ShapeError("point scene arrays disagree on point count");
        if (!positions.allFinite() || !albedo_features.allFinite() || !shading_features.allFinite() ||
            !influence.allFinite())
            throw Error("point scene contains non-finite values");
    }

    template <typename Other>
    PointScene<Other> cast() const {
        PointScene<Other> out;
        out.positions = positions.template cast<Other>();
        out.albedo_features = albedo_features.template cast<Other>();
        out.shading_features = shading_features.template cast<Other>();
        out.influence = influence.template cast<Other>();
        out.bounds = bounds;
        out.version_id = version_id;
        out.bundle_id = bundle_id;
        return out;
    }
};

/// Uniform positions inside `bounds`, N(0, 0.1^2) features, zero influence.
/// Draws come from one mt19937_64 stream in a fixed order, so the result is a
/// pure function of the arguments.
template <typename Scalar>
PointScene<Scalar> init_scene(Eigen::Index num_points, const Bounds& bounds, std::uint64_t seed,
                              int albedo_dim = kDefaultFeatureDim, int shading_dim = kDefaultFeatureDim,
                              double feature_std = kFeatureInitStd) {
    if (num_points < 1) throw Error("init_scene: num_points must be positive");
    if (bounds.degenerate()) throw Error("init_scene: degenerate bounds");
    if (albedo_dim < 1 || shading_dim < 1) throw Error("init_scene: feature dimensions must be positive");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, feature_std);

    PointScene<Scalar> scene;
    scene.bounds = bounds;
    scene.positions.resize(3, num_points);
    scene.albedo_features.resize(albedo_dim, num_points);
    scene.shading_features.resize(shading_dim, num_points);
    scene.influence = Vector<Scalar>::Zero(num_points);

    const Eigen::Vector3d extent = bounds.upper - bounds.lower;
    for (Eigen::Index i = 0; i < num_points; ++i) {
        for (int k = 0; k < 3; ++k) {
            double v = bounds.lower[k] + unit(rng) * extent[k];
            // guard the open upper end against rounding
            v = std::min(v, bounds.upper[k]);
            scene.positions(k, i) = Scalar(v);
        }
    }
    for (Eigen::Index i = 0; i < num_points; ++i)
        for (int k = 0; k < albedo_dim; ++k) scene.albedo_features(k, i) = Scalar(normal(rng));
    for (Eigen::Index i = 0; i < num_points; ++i)
        for (int k = 0; k < shading_dim; ++k) scene.shading_features(k, i) = Scalar(normal(rng));
    return scene;
}

}  // namespace ipapr
