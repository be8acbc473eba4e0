#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ipapr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Planar image: one column per pixel (row-major pixel order r * width + c),
/// one row per channel. Feature maps and RGB images share this layout so the
/// convolution code can treat both the same way.
template <typename Scalar>
struct Image {
    int height = 0;
    int width = 0;
    Matrix<Scalar> data;  // channels x (height * width)

    Image() = default;
    Image(int h, int w, int channels) : height(h), width(w), data(Matrix<Scalar>::Zero(channels, Eigen::Index(h) * w)) {}

    int channels() const { return int(data.rows()); }
    Eigen::Index pixels() const { return Eigen::Index(height) * width; }
    Eigen::Index index(int r, int c) const { return Eigen::Index(r) * width + c; }

    Scalar& at(int r, int c, int ch) { return data(ch, index(r, c)); }
    Scalar at(int r, int c, int ch) const { return data(ch, index(r, c)); }

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels() == other.channels();
    }

    template <typename Other>
    Image<Other> cast() const {
        Image<Other> out;
        out.height = height;
        out.width = width;
        out.data = data.template cast<Other>();
        return out;
    }
};

template <typename Scalar>
void require_same_shape(const Image<Scalar>& a, const Image<Scalar>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels()) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels()) + ")");
    }
}

/// Axis-aligned box in scene units.
struct Bounds {
    Eigen::Vector3d lower = Eigen::Vector3d::Constant(-1.0);
    Eigen::Vector3d upper = Eigen::Vector3d::Constant(1.0);

    bool degenerate() const { return !((upper - lower).array() > 0.0).all() || !lower.allFinite() || !upper.allFinite(); }
    bool contains(const Eigen::Vector3d& p) const {
        return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
    }
    double diameter() const { return (upper - lower).norm(); }
};

}  // namespace ipapr
