#include "ipapr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

namespace ipapr {

namespace {

using Clock = std::chrono::steady_clock;

struct GradSlot {
    const float* data;
    Eigen::Index size;
};

/// Adam entries pairing every array of `model` with the same-named array of `grad`.
std::vector<nn::ParamEntry<float>> entries_for(Model<float>& model, Model<float>& grad) {
    std::vector<GradSlot> slots;
    grad.for_each_param([&](const std::string&, const std::string&, auto& a) { slots.push_back({a.data(), a.size()}); });
    std::vector<nn::ParamEntry<float>> entries;
    std::size_t i = 0;
    model.for_each_param([&](const std::string& name, const std::string& group, auto& a) {
        const GradSlot& s = slots[i++];
        if (s.size != a.size()) throw ShapeError("gradient for '" + name + "' has the wrong size");
        entries.push_back({name, group, Eigen::Map<Vector<float>>(a.data(), a.size()),
                           Eigen::Map<const Vector<float>>(s.data, s.size)});
    });
    return entries;
}

nn::AdamHyper hyper_at(const TrainConfig& cfg, std::int64_t iteration) {
    nn::AdamHyper h;
    const double f = lr_factor(iteration, cfg.iterations, cfg.lr_final_fraction);
    for (auto [group, lr] : cfg.lr.by_group()) h.lr[group] = lr * f;
    return h;
}

LossWeights weights_for(const TrainConfig& cfg, const PerceptualTerm* perc) {
    return {cfg.lambda_mse, cfg.lambda_perc, perc};
}

bool finite(const LossTerms& t) { return std::isfinite(t.total) && std::isfinite(t.color) && std::isfinite(t.albedo); }

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string checkpoint_file(const TrainConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.checkpoint_dir) / name).string();
}

void prune_optimizer(nn::AdamState<float>& state, const PointScene<float>& scene, const std::vector<Eigen::Index>& keep) {
    state.select_columns("scene/positions", 3, keep);
    state.select_columns("scene/albedo_features", scene.albedo_dim(), keep);
    state.select_columns("scene/shading_features", scene.shading_dim(), keep);
    state.select_columns("scene/influence", 1, keep);
}

}  // namespace

void TrainConfig::validate() const {
    if (iterations < 1) throw Error("iterations must be at least 1");
    if (!(lambda_mse > 0.0)) throw Error("lambda_mse must be positive");
    if (!(lambda_perc >= 0.0)) throw Error("lambda_perc must be nonnegative");
    if (!(lr_final_fraction >= 0.0 && lr_final_fraction <= 1.0)) throw Error("lr_final_fraction must be in [0, 1]");
    for (auto [g, lr] : lr.by_group())
        if (!(lr >= 0.0)) throw Error("learning rate for '" + g + "' must be nonnegative");
    if (num_points < model.attention.k)
        throw Error("num_points (" + std::to_string(num_points) + ") must be at least K (" +
                    std::to_string(model.attention.k) + ")");
    if (prune.enabled && prune.every < 1) throw Error("prune.every must be positive");
    if (checkpoint_every < 0) throw Error("checkpoint_every must be nonnegative");
    if (checkpoint_every > 0 && checkpoint_dir.empty()) throw Error("checkpoint_every needs checkpoint_dir");
}

Json to_json(const TrainConfig& cfg) {
    return {{"iterations", cfg.iterations},
            {"lr",
             {{"points", cfg.lr.points},
              {"features", cfg.lr.features},
              {"influence", cfg.lr.influence},
              {"mlps", cfg.lr.mlps},
              {"decoders", cfg.lr.decoders}}},
            {"lr_final_fraction", cfg.lr_final_fraction},
            {"lambda_mse", cfg.lambda_mse},
            {"lambda_perc", cfg.lambda_perc},
            {"perceptual", cfg.perceptual},
            {"prune",
             {{"enabled", cfg.prune.enabled},
              {"threshold", cfg.prune.threshold},
              {"every", cfg.prune.every},
              {"start", cfg.prune.start}}},
            {"seed", cfg.seed},
            {"num_points", cfg.num_points},
            {"model", to_json(cfg.model)},
            {"checkpoint_every", cfg.checkpoint_every},
            {"checkpoint_dir", cfg.checkpoint_dir}};
}

TrainConfig train_config_from_json(const Json& j) {
    static const std::vector<std::string> known = {"iterations", "lr",   "lr_final_fraction", "lambda_mse",
                                                   "lambda_perc", "perceptual", "prune", "seed", "num_points",
                                                   "model", "checkpoint_every", "checkpoint_dir", "joint"};
    if (!j.is_object()) throw Error("train config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) throw Error("unknown train config field '" + key + "'");
    TrainConfig cfg;
    cfg.iterations = j.value("iterations", cfg.iterations);
    if (j.contains("lr")) {
        const Json& lr = j["lr"];
        cfg.lr.points = lr.value("points", cfg.lr.points);
        cfg.lr.features = lr.value("features", cfg.lr.features);
        cfg.lr.influence = lr.value("influence", cfg.lr.influence);
        cfg.lr.mlps = lr.value("mlps", cfg.lr.mlps);
        cfg.lr.decoders = lr.value("decoders", cfg.lr.decoders);
    }
    cfg.lr_final_fraction = j.value("lr_final_fraction", cfg.lr_final_fraction);
    cfg.lambda_mse = j.value("lambda_mse", cfg.lambda_mse);
    cfg.lambda_perc = j.value("lambda_perc", cfg.lambda_perc);
    cfg.perceptual = j.value("perceptual", cfg.perceptual);
    if (j.contains("prune")) {
        const Json& p = j["prune"];
        cfg.prune.enabled = p.value("enabled", cfg.prune.enabled);
        cfg.prune.threshold = p.value("threshold", cfg.prune.threshold);
        cfg.prune.every = p.value("every", cfg.prune.every);
        cfg.prune.start = p.value("start", cfg.prune.start);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.num_points = j.value("num_points", cfg.num_points);
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.checkpoint_dir = j.value("checkpoint_dir", cfg.checkpoint_dir);
    cfg.validate();
    return cfg;
}

std::unique_ptr<PerceptualTerm> make_perceptual(const std::string& id) {
    if (id.empty() || id == "none") return nullptr;
    throw Error("perceptual term '" + id + "' is not available in this build");
}

Json to_json(const LogRecord& r) {
    return {{"iteration", r.iteration}, {"scene", r.scene},           {"view", r.view},
            {"total", r.loss.total},    {"color", r.loss.color},      {"albedo", r.loss.albedo},
            {"wall_clock", r.wall_clock}};
}

TrainingAborted::TrainingAborted(std::int64_t iteration, const std::string& reason,
                                 std::shared_ptr<const Checkpoint> last_good, std::string checkpoint_path)
    : Error("training aborted at iteration " + std::to_string(iteration) + ": " + reason +
            (checkpoint_path.empty() ? std::string() : "; last good checkpoint: " + checkpoint_path)),
      iteration_(iteration),
      last_good_(std::move(last_good)),
      path_(std::move(checkpoint_path)) {}

EncodedTargets encode_targets(const Dataset& ds) {
    EncodedTargets t;
    for (const auto& v : ds.views) {
        t.color.push_back(log_encode(v.color, ds.log_eps));
        t.albedo.push_back(log_encode(v.albedo, ds.log_eps));
    }
    return t;
}

double lr_factor(std::int64_t iteration, std::int64_t iterations, double final_fraction) {
    const double progress = iterations <= 1 ? 0.0 : double(iteration - 1) / double(iterations - 1);
    return final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
std::vector<Eigen::Index> prune_points(PointScene<Scalar>& scene, double threshold, int min_points) {
    const Eigen::Index n = scene.size();
    std::vector<char> keep(n, 0);
    Eigen::Index kept = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(double(scene.influence[i]) < threshold)) keep[i] = 1, ++kept;
    if (kept < min_points) {
        std::vector<Eigen::Index> order;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!keep[i]) order.push_back(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return scene.influence[a] > scene.influence[b]; });
        for (std::size_t j = 0; kept < min_points && j < order.size(); ++j) keep[order[j]] = 1, ++kept;
    }
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
        if (keep[i]) idx.push_back(i);
    if (Eigen::Index(idx.size()) != n) {
        scene.positions = scene.positions(Eigen::all, idx).eval();
        scene.albedo_features = scene.albedo_features(Eigen::all, idx).eval();
        scene.shading_features = scene.shading_features(Eigen::all, idx).eval();
        scene.influence = scene.influence(idx).eval();
    }
    scene.version_id += 1;
    return idx;
}

template std::vector<Eigen::Index> prune_points(PointScene<float>&, double, int);
template std::vector<Eigen::Index> prune_points(PointScene<double>&, double, int);

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (dataset.views.empty()) throw Error("train: dataset has no views");
    const auto perc = make_perceptual(cfg.perceptual);
    const LossWeights weights = weights_for(cfg, perc.get());
    const EncodedTargets targets = encode_targets(dataset);
    nn::UNetSpec probe;
    probe.depth = cfg.model.unet_depth;
    for (const auto& v : dataset.views) probe.check_resolution(v.camera.height, v.camera.width);

    TrainResult result;
    Checkpoint& ck = result.checkpoint;
    ck.model_config = cfg.model;
    ck.model = init_model<float>(cfg.model, cfg.num_points, dataset.bounds, cfg.seed);
    ck.config = to_json(cfg);
    ck.cameras = dataset.cameras();
    ck.log_eps = dataset.log_eps;

    std::mt19937_64 sampler(cfg.seed ^ 0x5851f42d4c957f2dULL);
    std::uniform_int_distribution<int> pick(0, int(dataset.views.size()) - 1);
    const auto start = Clock::now();
    std::string last_path;

    auto abort = [&](std::int64_t it, const std::string& reason) {
        auto good = std::make_shared<Checkpoint>(ck);
        std::string path;
        if (!cfg.checkpoint_dir.empty()) {
            path = checkpoint_file(cfg, "last_good.ckpt");
            save_checkpoint(*good, path);
        }
        throw TrainingAborted(it, reason, good, path.empty() ? last_path : path);
    };

    for (std::int64_t it = ck.iteration + 1; it <= cfg.iterations; ++it) {
        if (hooks.before_iteration) hooks.before_iteration(it, ck.model);
        const int v = pick(sampler);
        LogRecord rec;
        rec.iteration = it;
        rec.view = v;
        Model<float> grad = loss_gradient(ck.model.scene, ck.model.attention.view(), ck.model.decoders.view(),
                                          dataset.views[v].camera, targets.color[v], targets.albedo[v], weights, rec.loss);
        if (!finite(rec.loss)) abort(it, "non-finite loss");
        auto entries = entries_for(ck.model, grad);
        try {
            nn::adam_step(ck.optimizer, entries, hyper_at(cfg, it));
        } catch (const nn::NonFiniteGradient& e) {
            abort(it, e.what());
        }
        ck.iteration = it;
        rec.wall_clock = seconds_since(start);
        result.log.push_back(rec);
        if (hooks.on_log) hooks.on_log(rec);

        if (cfg.prune.enabled && it >= cfg.prune.start && (it - cfg.prune.start) % cfg.prune.every == 0) {
            const auto keep = prune_points(ck.model.scene, cfg.prune.threshold, cfg.model.attention.k);
            prune_optimizer(ck.optimizer, ck.model.scene, keep);
        }
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
            last_path = checkpoint_file(cfg, "latest.ckpt");
            save_checkpoint(ck, last_path);
        }
    }
    return result;
}

Model<float> assemble_model(const SharedBundle& bundle, const SceneParams& p) {
    Model<float> m;
    m.scene = p.scene;
    m.attention = {p.k, p.key, p.query, bundle.albedo_value, bundle.shading_value};
    m.decoders = {bundle.albedo_decoder, p.color_decoder};
    return m;
}

void check_joint_compatible(const ModelConfig& a, const ModelConfig& b) {
    if (to_json(a) != to_json(b))
        throw ShapeError("joint training needs identical model configurations; got " + to_json(a).dump() + " and " +
                         to_json(b).dump());
}

namespace {

/// Adam entries for the shared arrays of the bundle.
std::vector<nn::ParamEntry<float>> shared_entries(SharedBundle& b, Model<float>& grad) {
    std::vector<nn::ParamEntry<float>> out;
    std::vector<GradSlot> slots;
    auto collect = [&](const std::string&, auto& a) { slots.push_back({a.data(), a.size()}); };
    grad.attention.albedo_value.for_each_param("", collect);
    grad.attention.shading_value.for_each_param("", collect);
    grad.decoders.albedo.for_each_param("", collect);
    std::size_t i = 0;
    auto add = [&](const std::string& group) {
        return [&, group](const std::string& name, auto& a) {
            const GradSlot& s = slots[i++];
            out.push_back({name, group, Eigen::Map<Vector<float>>(a.data(), a.size()),
                           Eigen::Map<const Vector<float>>(s.data, s.size)});
        };
    };
    b.albedo_value.for_each_param("attention/albedo_value", add("mlps"));
    b.shading_value.for_each_param("attention/shading_value", add("mlps"));
    b.albedo_decoder.for_each_param("decoder/albedo", add("decoders"));
    return out;
}

std::vector<nn::ParamEntry<float>> own_entries(SceneParams& p, Model<float>& grad) {
    std::vector<nn::ParamEntry<float>> out;
    auto add = [&](const std::string& name, const std::string& group, auto& a, auto& g) {
        out.push_back({name, group, Eigen::Map<Vector<float>>(a.data(), a.size()),
                       Eigen::Map<const Vector<float>>(g.data(), g.size())});
    };
    add("scene/positions", "points", p.scene.positions, grad.scene.positions);
    add("scene/albedo_features", "features", p.scene.albedo_features, grad.scene.albedo_features);
    add("scene/shading_features", "features", p.scene.shading_features, grad.scene.shading_features);
    add("scene/influence", "influence", p.scene.influence, grad.scene.influence);
    std::vector<GradSlot> slots;
    auto collect = [&](const std::string&, auto& a) { slots.push_back({a.data(), a.size()}); };
    grad.attention.key.for_each_param("", collect);
    grad.attention.query.for_each_param("", collect);
    grad.decoders.color.for_each_param("", collect);
    std::size_t i = 0;
    auto pair = [&](const std::string& group) {
        return [&, group](const std::string& name, auto& a) {
            const GradSlot& s = slots[i++];
            out.push_back({name, group, Eigen::Map<Vector<float>>(a.data(), a.size()),
                           Eigen::Map<const Vector<float>>(s.data, s.size)});
        };
    };
    p.key.for_each_param("attention/key", pair("mlps"));
    p.query.for_each_param("attention/query", pair("mlps"));
    p.color_decoder.for_each_param("decoder/color", pair("decoders"));
    return out;
}

}  // namespace

JointResult joint_train(const Dataset& da, const TrainConfig& cfg_a, const Dataset& db, const TrainConfig& cfg_b,
                        const TrainHooks& hooks) {
    cfg_a.validate();
    cfg_b.validate();
    check_joint_compatible(cfg_a.model, cfg_b.model);
    if (da.views.empty() || db.views.empty()) throw Error("joint_train: both datasets need views");
    const Dataset* data[2] = {&da, &db};
    const TrainConfig* cfgs[2] = {&cfg_a, &cfg_b};
    const auto perc = make_perceptual(cfg_a.perceptual);
    const LossWeights weights = weights_for(cfg_a, perc.get());
    const EncodedTargets targets[2] = {encode_targets(da), encode_targets(db)};

    JointResult r;
    r.bundle.id = "bundle-" + hex64(fnv1a(to_json(cfg_a).dump() + to_json(cfg_b).dump()));
    nn::AdamState<float> shared_state, own_state[2];
    for (int s = 0; s < 2; ++s) {
        Model<float> m = init_model<float>(cfgs[s]->model, cfgs[s]->num_points, data[s]->bounds, cfgs[s]->seed);
        if (s == 0) {
            r.bundle.albedo_value = m.attention.albedo_value;
            r.bundle.shading_value = m.attention.shading_value;
            r.bundle.albedo_decoder = m.decoders.albedo;
        }
        SceneParams& p = r.scenes[s];
        p.scene = std::move(m.scene);
        p.scene.bundle_id = r.bundle.id;
        p.key = std::move(m.attention.key);
        p.query = std::move(m.attention.query);
        p.color_decoder = std::move(m.decoders.color);
        p.k = cfgs[s]->model.attention.k;
    }

    std::mt19937_64 sampler(cfg_a.seed ^ 0x5851f42d4c957f2dULL);
    std::uniform_int_distribution<int> pick[2] = {std::uniform_int_distribution<int>(0, int(da.views.size()) - 1),
                                                  std::uniform_int_distribution<int>(0, int(db.views.size()) - 1)};
    const auto start = Clock::now();
    std::int64_t own_iter[2] = {0, 0};
    for (std::int64_t it = 1; it <= cfg_a.iterations; ++it) {
        const int s = int((it - 1) % 2);
        SceneParams& p = r.scenes[s];
        const int v = pick[s](sampler);
        LogRecord rec;
        rec.iteration = it;
        rec.scene = s;
        rec.view = v;
        Model<float> grad = loss_gradient(p.scene, p.attention(r.bundle), p.decoders(r.bundle),
                                          data[s]->views[v].camera, targets[s].color[v], targets[s].albedo[v], weights,
                                          rec.loss);
        if (!finite(rec.loss)) throw Error("joint training: non-finite loss at iteration " + std::to_string(it));
        auto shared = shared_entries(r.bundle, grad);
        auto own = own_entries(p, grad);
        const nn::AdamHyper h = hyper_at(cfg_a, it);
        for (const auto* list : {&shared, &own})
            for (const auto& e : *list)
                if (!e.grad.allFinite())
                    throw Error("joint training: non-finite gradient in '" + e.name + "' at iteration " + std::to_string(it));
        nn::adam_step(shared_state, shared, h);
        nn::adam_step(own_state[s], own, h);
        own_iter[s] = it;
        rec.wall_clock = seconds_since(start);
        r.log.push_back(rec);
        if (hooks.on_log) hooks.on_log(rec);
    }

    for (int s = 0; s < 2; ++s) {
        Checkpoint& ck = r.checkpoints[s];
        ck.model_config = cfgs[s]->model;
        ck.model = assemble_model(r.bundle, r.scenes[s]);
        ck.optimizer = own_state[s];
        for (const auto& [name, mom] : shared_state.moments) ck.optimizer.moments[name] = mom;
        ck.iteration = own_iter[s];
        ck.config = to_json(*cfgs[s]);
        ck.config["joint"] = {{"bundle_id", r.bundle.id}, {"scene", s}};
        ck.cameras = data[s]->cameras();
        ck.log_eps = data[s]->log_eps;
    }
    return r;
}

}  // namespace ipapr
