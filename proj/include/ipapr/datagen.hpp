#pragma once

#include "ipapr/dataset.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ipapr::synth {

/// Albedo texture. Checkers are solid 3D checkers in world space with cell
/// size `scale`. Image textures use an equirectangular map on spheres and a
/// planar map on box faces, nearest-sample lookup.
struct Texture {
    enum class Kind { Solid, Checker, Image };
    Kind kind = Kind::Solid;
    Eigen::Vector3d color_a = Eigen::Vector3d::Constant(0.8);
    Eigen::Vector3d color_b = Eigen::Vector3d::Constant(0.2);
    double scale = 0.25;
    std::string image_path;
    Image<float> image;  // filled from image_path on load
};

struct Sphere {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 0.5;
    Texture texture;
};

struct Box {
    Eigen::Vector3d lower = Eigen::Vector3d::Constant(-0.5);
    Eigen::Vector3d upper = Eigen::Vector3d::Constant(0.5);
    Texture texture;
};

/// Monochromatic point light.
struct Light {
    Eigen::Vector3d position = Eigen::Vector3d(0, 2, 0);
    double intensity = 1.0;
};

/// Cameras on a horizontal circle around `target`, all looking at it.
/// `jitter` in [0, 1) perturbs each azimuth by up to that fraction of the
/// spacing, drawn from the scene seed.
struct CameraRing {
    int count = 24;
    double radius = 3.0;
    double elevation = 1.0;
    Eigen::Vector3d target = Eigen::Vector3d::Zero();
    double fov_degrees = 40.0;
    double jitter = 0.0;
};

struct SceneSpec {
    std::string name = "custom";
    std::vector<Sphere> spheres;
    std::vector<Box> boxes;
    std::vector<Light> lights;
    double ambient = 0.1;
    bool shadows = false;
    CameraRing ring;
    int height = 64;
    int width = 64;
    std::uint64_t seed = 0;
    Bounds bounds;

    void validate() const;
};

Json to_json(const SceneSpec& spec);
/// Image textures are loaded relative to `base_dir`.
SceneSpec scene_spec_from_json(const Json& j, const std::filesystem::path& base_dir = {});

/// Reference desk scene: two spheres on a checkered ground box, two lights,
/// 24 ring cameras at 64x64.
SceneSpec checker_orb();

struct Hit {
    double t = 0.0;
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
    int primitive = -1;  // spheres first, then boxes
};

/// Closest intersection with t > t_min.
std::optional<Hit> intersect_sphere(const Sphere& s, const Ray<double>& ray, double t_min = 1e-9);
std::optional<Hit> intersect_box(const Box& b, const Ray<double>& ray, double t_min = 1e-9);
std::optional<Hit> trace(const SceneSpec& spec, const Ray<double>& ray, double t_min = 1e-9);

Eigen::Vector3d albedo_at(const SceneSpec& spec, const Hit& hit);

/// clamp(ambient + sum_l I_l max(0, n.w_l) / d_l^2, 0, 1), equal in all channels.
/// Lights reported as occluded by `occluded` contribute nothing.
double shade_lambertian(const Eigen::Vector3d& normal, const Eigen::Vector3d& point, const std::vector<Light>& lights,
                        double ambient, const std::vector<bool>& occluded = {});

/// Shading at a hit, including the shadow test when the spec enables it.
double shading_at(const SceneSpec& spec, const Hit& hit);

struct IntrinsicImages {
    Image<double> color;
    Image<double> albedo;
    Image<double> shading;
    Eigen::Array<bool, Eigen::Dynamic, 1> hit;  // per pixel
};

/// First-hit ray tracing through pixel centers; background is black.
IntrinsicImages render_intrinsics(const SceneSpec& spec, const Camera& camera);

std::vector<Camera> ring_cameras(const SceneSpec& spec);

/// One view per ring camera. Albedo and shading are rounded to float first and
/// color is their product, so I = A * S holds to float rounding.
Dataset generate_scene(const SceneSpec& spec);

}  // namespace ipapr::synth
