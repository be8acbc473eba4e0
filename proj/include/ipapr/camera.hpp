#pragma once

#include "ipapr/core.hpp"

#include <cmath>

namespace ipapr {

/// Pinhole camera. World to camera is x_cam = rotation * x_world + translation.
/// The camera looks down -z in its own frame with x to the right and y up;
/// pixel rows grow downward, so image y maps to -y_cam.
struct Camera {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double focal = 1.0;
    Eigen::Vector2d principal = Eigen::Vector2d::Zero();  // (cx, cy) in pixels
    int height = 1;
    int width = 1;

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    /// Throws Error when any invariant fails.
    void validate() const {
        if (!((rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9))
            throw Error("camera rotation is not orthonormal");
        if (!(focal > 0.0) || !std::isfinite(focal)) throw Error("camera focal length must be positive");
        if (height < 1 || width < 1) throw Error("camera resolution must be at least 1x1");
        if (!translation.allFinite() || !principal.allFinite()) throw Error("camera parameters must be finite");
    }

    /// Camera placed at `eye` looking at `target`, world up is +y.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double focal, int height,
                          int width) {
        const Eigen::Vector3d forward = (target - eye).normalized();
        Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY());
        if (right.norm() < 1e-12) right = forward.cross(Eigen::Vector3d::UnitZ());
        right.normalize();
        const Eigen::Vector3d up = right.cross(forward);
        Camera cam;
        // rows are the camera axes expressed in world coordinates; camera z = -forward
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = up.transpose();
        cam.rotation.row(2) = -forward.transpose();
        cam.translation = -cam.rotation * eye;
        cam.focal = focal;
        cam.principal = Eigen::Vector2d(width / 2.0, height / 2.0);
        cam.height = height;
        cam.width = width;
        return cam;
    }

    /// Pixel coordinates (x = column, y = row, continuous) and camera-space depth (-z_cam).
    Eigen::Vector3d project(const Eigen::Vector3d& world) const {
        const Eigen::Vector3d p = rotation * world + translation;
        const double depth = -p.z();
        return {principal.x() + focal * p.x() / depth, principal.y() - focal * p.y() / depth, depth};
    }
};

template <typename Scalar>
struct Ray {
    Vec3<Scalar> origin;
    Vec3<Scalar> direction;  // unit length
};

/// All rays of one camera. Every ray shares the camera center as origin.
template <typename Scalar>
struct RayGrid {
    int height = 0;
    int width = 0;
    Vec3<Scalar> origin;
    Matrix<Scalar> directions;  // 3 x (height * width), pixel order r * width + c

    Ray<Scalar> ray(Eigen::Index pixel) const { return {origin, directions.col(pixel)}; }
    Eigen::Index size() const { return directions.cols(); }
};

/// World-space unit direction through continuous pixel position (x, y).
inline Eigen::Vector3d pixel_direction(const Camera& camera, double x, double y) {
    const Eigen::Vector3d d_cam((x - camera.principal.x()) / camera.focal, -(y - camera.principal.y()) / camera.focal,
                                -1.0);
    return (camera.rotation.transpose() * d_cam).normalized();
}

/// Rays through pixel centers (c + 0.5, r + 0.5).
template <typename Scalar = double>
RayGrid<Scalar> generate_rays(const Camera& camera) {
    camera.validate();
    RayGrid<Scalar> grid;
    grid.height = camera.height;
    grid.width = camera.width;
    grid.origin = camera.center().cast<Scalar>();
    grid.directions.resize(3, Eigen::Index(camera.height) * camera.width);
    for (int r = 0; r < camera.height; ++r) {
        for (int c = 0; c < camera.width; ++c) {
            grid.directions.col(Eigen::Index(r) * camera.width + c) =
                pixel_direction(camera, c + 0.5, r + 0.5).cast<Scalar>();
        }
    }
    return grid;
}

/// Ray through the center of pixel (row, col).
inline Ray<double> pixel_ray(const Camera& camera, int row, int col) {
    return {camera.center(), pixel_direction(camera, col + 0.5, row + 0.5)};
}

}  // namespace ipapr
