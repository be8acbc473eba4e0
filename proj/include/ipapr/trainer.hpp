#pragma once

#include "ipapr/checkpoint.hpp"
#include "ipapr/dataset.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ipapr {

struct LearningRates {
    double points = 5e-4;
    double features = 1e-3;
    double influence = 1e-3;
    double mlps = 1e-4;
    double decoders = 1e-4;

    /// Keyed by the parameter groups of Model::for_each_param.
    std::map<std::string, double> by_group() const {
        return {{"points", points}, {"features", features}, {"influence", influence}, {"mlps", mlps}, {"decoders", decoders}};
    }
};

struct PruneConfig {
    bool enabled = false;
    double threshold = -5.0;  // points with influence below this are removed
    int every = 1000;
    int start = 1000;
};

struct TrainConfig {
    int iterations = 20000;
    LearningRates lr;
    double lr_final_fraction = 0.1;  // cosine decay floor
    double lambda_mse = 1.0;
    double lambda_perc = 0.0;
    std::string perceptual = "none";
    PruneConfig prune;
    std::uint64_t seed = 0;
    int num_points = 2048;
    ModelConfig model;
    int checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::string checkpoint_dir;

    void validate() const;
};

Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

/// Pluggable image distance added to the MSE term with weight lambda_perc.
/// Images are in the log domain; `grad` receives d(value)/d(pred) when non-null.
class PerceptualTerm {
public:
    virtual ~PerceptualTerm() = default;
    virtual std::string id() const = 0;
    virtual double evaluate(const Image<float>& pred, const Image<float>& gt, Image<float>* grad) const = 0;
};

/// "none" yields a null term. Other identifiers name perceptual models that are
/// not bundled, so they raise an error.
std::unique_ptr<PerceptualTerm> make_perceptual(const std::string& id);

struct LossTerms {
    double total = 0.0;
    double color = 0.0;
    double albedo = 0.0;
};

struct LossWeights {
    double mse = 1.0;
    double perc = 0.0;
    const PerceptualTerm* perceptual = nullptr;
};

namespace detail {

template <typename Scalar>
double image_distance(const Image<Scalar>& pred, const Image<Scalar>& gt, const LossWeights& w, Image<Scalar>* grad) {
    require_same_shape(pred, gt, "compute_loss");
    const double count = double(pred.data.size());
    const Matrix<Scalar> diff = pred.data - gt.data;
    double value = w.mse * (diff.template cast<double>().squaredNorm() / count);
    if (grad) {
        grad->height = pred.height;
        grad->width = pred.width;
        grad->data = diff * Scalar(2.0 * w.mse / count);
    }
    if (w.perc != 0.0 && w.perceptual) {
        if constexpr (std::is_same_v<Scalar, float>) {
            Image<float> g;
            value += w.perc * w.perceptual->evaluate(pred, gt, grad ? &g : nullptr);
            if (grad) grad->data += Scalar(w.perc) * g.data;
        } else {
            throw Error("perceptual terms are only available in float precision");
        }
    }
    return value;
}

}  // namespace detail

/// total = d(color, gt color) + d(albedo, gt albedo) with
/// d = lambda_mse * MSE + lambda_perc * Perc, all in the log domain. Shading has
/// no term. Optional outputs receive the gradients with respect to the predictions.
template <typename Scalar>
LossTerms compute_loss(const RenderOutput<Scalar>& pred, const Image<Scalar>& gt_color, const Image<Scalar>& gt_albedo,
                       const LossWeights& weights = {}, Image<Scalar>* grad_color = nullptr,
                       Image<Scalar>* grad_albedo = nullptr) {
    LossTerms t;
    t.color = detail::image_distance(pred.color, gt_color, weights, grad_color);
    t.albedo = detail::image_distance(pred.albedo, gt_albedo, weights, grad_albedo);
    t.total = t.color + t.albedo;
    return t;
}

/// Renders one view, evaluates the loss and backpropagates it.
template <typename Scalar>
Model<Scalar> loss_gradient(const PointScene<Scalar>& scene, const AttentionView<Scalar>& attention,
                            const DecoderView<Scalar>& decoders, const Camera& camera, const Image<Scalar>& gt_color,
                            const Image<Scalar>& gt_albedo, const LossWeights& weights, LossTerms& terms) {
    RenderCache<Scalar> cache;
    const RenderOutput<Scalar> out = render_view(scene, attention, decoders, camera, &cache);
    Image<Scalar> gc, ga;
    terms = compute_loss(out, gt_color, gt_albedo, weights, &gc, &ga);
    if (!std::isfinite(terms.total)) return {};
    return render_view_backward(scene, attention, decoders, cache, gc, ga);
}

struct LogRecord {
    std::int64_t iteration = 0;
    int view = 0;
    int scene = 0;  // 0 or 1 for joint training
    LossTerms loss;
    double wall_clock = 0.0;  // seconds since training started
};

Json to_json(const LogRecord& r);

/// Raised when the loss or a gradient turns non-finite. Holds the state before
/// the failing iteration; `checkpoint_path` is set when it was written to disk.
class TrainingAborted : public Error {
public:
    TrainingAborted(std::int64_t iteration, const std::string& reason, std::shared_ptr<const Checkpoint> last_good,
                    std::string checkpoint_path);
    std::int64_t iteration() const { return iteration_; }
    const Checkpoint& last_good() const { return *last_good_; }
    const std::string& checkpoint_path() const { return path_; }

private:
    std::int64_t iteration_;
    std::shared_ptr<const Checkpoint> last_good_;
    std::string path_;
};

struct TrainHooks {
    std::function<void(const LogRecord&)> on_log;
    /// Called before each iteration with the mutable model (testing hook).
    std::function<void(std::int64_t, Model<float>&)> before_iteration;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRecord> log;
};

/// Log-encoded training targets, one pair per view.
struct EncodedTargets {
    std::vector<Image<float>> color;
    std::vector<Image<float>> albedo;
};
EncodedTargets encode_targets(const Dataset& ds);

/// Cosine decay from 1 to `final_fraction` over `iterations` (iteration is 1-based).
double lr_factor(std::int64_t iteration, std::int64_t iterations, double final_fraction);

/// Removes points whose influence is below `threshold`, keeping at least `min_points`
/// (refilled by highest influence, lower index first on ties). Returns the kept
/// indices in ascending order; the version id is bumped.
template <typename Scalar>
std::vector<Eigen::Index> prune_points(PointScene<Scalar>& scene, double threshold, int min_points);

/// Mini-batch 1, uniform view sampling with replacement, Adam on every group.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Parameters shared by two jointly trained scenes: both value MLPs and the
/// albedo decoder. Exactly one copy exists.
struct SharedBundle {
    std::string id;
    nn::Mlp<float> albedo_value;
    nn::Mlp<float> shading_value;
    nn::UNet<float> albedo_decoder;
};

/// Parameters owned by one scene of a joint run.
struct SceneParams {
    PointScene<float> scene;
    nn::Mlp<float> key;
    nn::Mlp<float> query;
    nn::UNet<float> color_decoder;
    int k = 8;

    AttentionView<float> attention(const SharedBundle& b) const {
        return {key, query, b.albedo_value, b.shading_value, k};
    }
    DecoderView<float> decoders(const SharedBundle& b) const { return {b.albedo_decoder, color_decoder}; }
};

/// Standalone model for one scene of a bundle (copies of the shared arrays).
Model<float> assemble_model(const SharedBundle& bundle, const SceneParams& params);

struct JointResult {
    SharedBundle bundle;
    SceneParams scenes[2];
    Checkpoint checkpoints[2];
    std::vector<LogRecord> log;
};

/// Alternates iterations between the two scenes (A, B, A, B, ...). Shared
/// groups are updated from both scenes through one optimizer state; per-scene
/// groups only from their own scene. Iteration counts and seeds come from `cfg_a`.
JointResult joint_train(const Dataset& a, const TrainConfig& cfg_a, const Dataset& b, const TrainConfig& cfg_b,
                        const TrainHooks& hooks = {});

/// Throws ShapeError when the shared parts of the two configurations differ.
void check_joint_compatible(const ModelConfig& a, const ModelConfig& b);

}  // namespace ipapr
