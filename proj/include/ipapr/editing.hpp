#pragma once

#include "ipapr/attention.hpp"
#include "ipapr/json_io.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ipapr {

using PointIds = std::vector<Eigen::Index>;

struct AlbedoTransfer {
    Eigen::Index source = 0;
    PointIds targets;
};

struct ShadingTransfer {
    Eigen::Index source = 0;
    PointIds targets;
};

/// targets == nullopt means every point.
struct ShadingScale {
    std::optional<PointIds> targets;
    double scale = 1.0;
};

struct AlbedoBlend {
    PointIds sources;
    std::vector<double> weights;  // nonnegative, summing to 1
    PointIds targets;
};

enum class FeatureKind { Albedo, Shading };

/// Scene ids are version ids: the source scene version and the target scene
/// version the op applies to.
struct CrossSceneTransfer {
    std::uint64_t source_scene = 0;
    Eigen::Index source_point = 0;
    std::uint64_t target_scene = 0;
    PointIds targets;
    FeatureKind kind = FeatureKind::Albedo;
};

using EditOp = std::variant<AlbedoTransfer, ShadingTransfer, ShadingScale, AlbedoBlend, CrossSceneTransfer>;

/// Raised for malformed ops; `field()` names the offending JSON field.
class EditError : public Error {
public:
    EditError(std::string field, const std::string& what) : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

std::string op_type(const EditOp& op);
Json to_json(const EditOp& op);
EditOp edit_op_from_json(const Json& j);

/// Checks id ranges against a scene with `num_points` points plus the op's own
/// invariants (blend weights, finite scale).
void validate_edit(const EditOp& op, Eigen::Index num_points);

namespace detail {

template <typename Scalar>
void copy_column(Matrix<Scalar>& m, Eigen::Index source, const PointIds& targets) {
    const Vector<Scalar> v = m.col(source);
    for (Eigen::Index t : targets) m.col(t) = v;
}

}  // namespace detail

/// New scene version with the op applied; `scene` is untouched. Cross-scene
/// ops go through apply_cross_scene.
template <typename Scalar>
PointScene<Scalar> apply_edit(const PointScene<Scalar>& scene, const EditOp& op) {
    if (std::holds_alternative<CrossSceneTransfer>(op))
        throw EditError("type", "cross-scene transfers need both scenes; use apply_cross_scene");
    validate_edit(op, scene.size());
    PointScene<Scalar> out = scene;
    if (const auto* e = std::get_if<AlbedoTransfer>(&op)) {
        detail::copy_column(out.albedo_features, e->source, e->targets);
    } else if (const auto* e = std::get_if<ShadingTransfer>(&op)) {
        detail::copy_column(out.shading_features, e->source, e->targets);
    } else if (const auto* e = std::get_if<ShadingScale>(&op)) {
        const Scalar s = Scalar(e->scale);
        if (!e->targets) {
            out.shading_features *= s;
        } else {
            for (Eigen::Index t : *e->targets) out.shading_features.col(t) = scene.shading_features.col(t) * s;
        }
    } else if (const auto* e = std::get_if<AlbedoBlend>(&op)) {
        Vector<Scalar> mix = Vector<Scalar>::Zero(scene.albedo_dim());
        for (std::size_t k = 0; k < e->sources.size(); ++k)
            mix += Scalar(e->weights[k]) * scene.albedo_features.col(e->sources[k]);
        for (Eigen::Index t : e->targets) out.albedo_features.col(t) = mix;
    }
    out.version_id = scene.version_id + 1;
    return out;
}

/// Copies one feature vector from `source` into the targets of `target`. Both
/// scenes must come from the same joint training run (same bundle id) and
/// match the op's scene ids.
template <typename Scalar>
PointScene<Scalar> apply_cross_scene(const PointScene<Scalar>& source, const PointScene<Scalar>& target,
                                     const CrossSceneTransfer& op) {
    if (source.bundle_id.empty() || target.bundle_id.empty() || source.bundle_id != target.bundle_id)
        throw EditError("source_scene", "scenes were not trained jointly with shared value MLPs and albedo decoder");
    if (op.source_scene != source.version_id) throw EditError("source_scene", "does not match the source scene version");
    if (op.target_scene != target.version_id) throw EditError("target_scene", "does not match the target scene version");
    if (op.source_point < 0 || op.source_point >= source.size()) throw EditError("source_point", "point id out of range");
    for (Eigen::Index t : op.targets)
        if (t < 0 || t >= target.size()) throw EditError("targets", "point id " + std::to_string(t) + " out of range");
    const bool albedo = op.kind == FeatureKind::Albedo;
    const Matrix<Scalar>& from = albedo ? source.albedo_features : source.shading_features;
    PointScene<Scalar> out = target;
    Matrix<Scalar>& to = albedo ? out.albedo_features : out.shading_features;
    if (from.rows() != to.rows()) throw ShapeError("cross-scene transfer between different feature widths");
    for (Eigen::Index t : op.targets) to.col(t) = from.col(op.source_point);
    out.version_id = target.version_id + 1;
    return out;
}

/// Ray through the center of pixel (row, col), computed exactly as the renderer does.
template <typename Scalar>
Ray<Scalar> render_ray(const Camera& camera, int row, int col) {
    camera.validate();
    if (row < 0 || col < 0 || row >= camera.height || col >= camera.width)
        throw Error("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") is outside the image");
    return {camera.center().cast<Scalar>(), pixel_direction(camera, col + 0.5, row + 0.5).cast<Scalar>()};
}

/// Point with the largest attention weight on the pixel's ray; ties go to the
/// lower point id.
template <typename Scalar>
Eigen::Index pick_point(const PointScene<Scalar>& scene, const AttentionView<Scalar>& attention, const Camera& camera,
                        int row, int col) {
    const RayAttention<Scalar> ra = ray_attention(scene, attention, render_ray<Scalar>(camera, row, col));
    Eigen::Index best = ra.indices[0];
    Scalar best_w = ra.weights[0];
    for (std::size_t s = 1; s < ra.indices.size(); ++s) {
        const Scalar w = ra.weights[Eigen::Index(s)];
        if (w > best_w || (w == best_w && ra.indices[s] < best)) best = ra.indices[s], best_w = w;
    }
    return best;
}

/// Ids of all points within `radius` of the center point (inclusive), ascending.
template <typename Scalar>
PointIds select_region(const PointScene<Scalar>& scene, Eigen::Index center, double radius) {
    if (center < 0 || center >= scene.size()) throw Error("select_region: center id out of range");
    if (!(radius >= 0.0)) throw Error("select_region: radius must be nonnegative");
    PointIds out;
    const Vec3<Scalar> c = scene.positions.col(center);
    for (Eigen::Index i = 0; i < scene.size(); ++i)
        if (i == center || double((scene.positions.col(i) - c).norm()) <= radius) out.push_back(i);
    return out;
}

/// Scene version tree. Versions are immutable once created; ids increase
/// strictly across the whole tree. Safe for concurrent use.
class VersionTree {
public:
    struct Version {
        std::uint64_t id = 0;
        std::optional<std::uint64_t> parent;
        std::optional<EditOp> op;
        std::shared_ptr<const PointScene<float>> scene;
    };

    /// Adds a root version and returns its id.
    std::uint64_t add_root(PointScene<float> scene);
    /// Applies `op` to version `parent`, records the result, returns the new id.
    std::uint64_t edit(std::uint64_t parent, const EditOp& op);

    std::shared_ptr<const Version> get(std::uint64_t id) const;
    std::vector<std::shared_ptr<const Version>> versions() const;
    std::uint64_t root_of(std::uint64_t id) const;
    /// Ordered edits from the root to `id`: [{version, parent, op}, ...].
    Json log(std::uint64_t id) const;

private:
    mutable std::mutex mutex_;
    std::map<std::uint64_t, std::shared_ptr<const Version>> versions_;
    std::uint64_t next_id_ = 0;
};

/// Re-applies an exported log to `root`. Cross-scene entries look up their
/// source scene through `source_of`.
PointScene<float> replay_log(const PointScene<float>& root, const Json& log,
                             const std::function<const PointScene<float>&(std::uint64_t)>& source_of = {});

}  // namespace ipapr
