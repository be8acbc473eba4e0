// Acceptance run: one PASS/FAIL line per criterion A1..A9.
//
//   acceptance [--only A3,A5] [--cache-dir DIR] [--report out.json]
//
// --cache-dir reuses the trained reference model between runs (keyed by the
// training configuration); ctest runs without it.

#include "ipapr/checkpoint.hpp"
#include "ipapr/datagen.hpp"
#include "ipapr/editing.hpp"
#include "ipapr/evalkit.hpp"
#include "ipapr/image_io.hpp"
#include "ipapr/service.hpp"
#include "ipapr/trainer.hpp"
#include "support/metric_oracles.hpp"
#include "support/render_gradcheck.hpp"
#include "support/scenes.hpp"
#include "support/tempdir.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

using namespace ipapr;
namespace fs = std::filesystem;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    std::string id;
    bool pass = false;
    std::string detail;
    Json data = Json::object();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

template <typename T>
bool same_params(T& x, T& y) {
    std::vector<Eigen::VectorXf> flat;
    x.for_each_param("", [&](const std::string&, auto& a) { flat.push_back(Eigen::Map<const Eigen::VectorXf>(a.data(), a.size())); });
    bool same = true;
    std::size_t i = 0;
    y.for_each_param("", [&](const std::string&, auto& a) {
        same = same && i < flat.size() && flat[i++] == Eigen::Map<const Eigen::VectorXf>(a.data(), a.size());
    });
    return same && i == flat.size();
}

Image<double> to_double(const Image<float>& img) { return img.cast<double>(); }

// ---------------------------------------------------------------------------
// A1

Outcome check_a1() {
    const auto t0 = Clock::now();
    const nn::GradCheckReport report = fixtures::render_grad_check(3, 1e-5, 1e-4);
    const double secs = seconds_since(t0);
    Outcome o{"A1", report.passed() && secs < 120.0};
    std::string flagged;
    for (const auto& g : report.flagged_groups()) flagged += " " + g;
    o.detail = fmt("%zu parameter arrays, max rel err %.2e (tol 1e-4, h 1e-5)%s, %.1f s", report.groups.size(),
                   report.max_rel_error, flagged.empty() ? "" : (", flagged:" + flagged).c_str(), secs);
    o.data = {{"max_rel_error", report.max_rel_error}, {"seconds", secs}};
    return o;
}

// ---------------------------------------------------------------------------
// A2

Outcome check_a2() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pick_k(1, 8);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    const int instances = 1000;
    int topk_fail = 0, sum_fail = 0, perm_fail = 0, shift_fail = 0;
    double worst_sum = 0.0, worst_perm = 0.0, worst_shift = 0.0;
    Bounds bounds;
    bounds.lower = Eigen::Vector3d::Constant(-1.0);
    bounds.upper = Eigen::Vector3d::Constant(1.0);

    for (int inst = 0; inst < instances; ++inst) {
        const int k = pick_k(rng);
        const int n = std::uniform_int_distribution<int>(k, 64)(rng);
        ModelConfig cfg = fixtures::micro_config(k);
        cfg.attention.key_dim = 6;
        Model<double> m = init_model<double>(cfg, n, bounds, rng());
        for (Eigen::Index i = 0; i < n; ++i) m.scene.influence[i] = normal(rng);

        Eigen::Vector3d eye(normal(rng), normal(rng), normal(rng));
        eye = eye.normalized() * 3.0;
        const Camera cam = Camera::look_at(eye, Eigen::Vector3d(0.2 * normal(rng), 0.2 * normal(rng), 0.0), 2.4, 2, 2);
        const int pixel = std::uniform_int_distribution<int>(0, 3)(rng);
        const Ray<double> ray = pixel_ray(cam, pixel / 2, pixel % 2);

        std::vector<Eigen::Index> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return perpendicular_distance_sq<double>(m.scene.positions.col(a), ray) <
                   perpendicular_distance_sq<double>(m.scene.positions.col(b), ray);
        });
        order.resize(k);
        const RayAttention<double> ra = ray_attention(m.scene, m.attention.view(), ray);
        if (ra.indices != order) ++topk_fail;

        const double err = std::abs(ra.weights.sum() - 1.0);
        worst_sum = std::max(worst_sum, err);
        if (err > 1e-6 || (ra.weights.array() < 0.0).any()) ++sum_fail;

        PointScene<double> shifted = m.scene;
        shifted.influence.array() += shift(rng);
        const RayAttention<double> rs = ray_attention(shifted, m.attention.view(), ray);
        const double ds = (rs.weights - ra.weights).cwiseAbs().maxCoeff();
        worst_shift = std::max(worst_shift, ds);
        if (rs.indices != ra.indices || ds > 1e-9) ++shift_fail;

        std::vector<Eigen::Index> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        PointScene<double> permuted = m.scene;
        for (Eigen::Index i = 0; i < n; ++i) {
            permuted.positions.col(i) = m.scene.positions.col(perm[i]);
            permuted.albedo_features.col(i) = m.scene.albedo_features.col(perm[i]);
            permuted.shading_features.col(i) = m.scene.shading_features.col(perm[i]);
            permuted.influence[i] = m.scene.influence[perm[i]];
        }
        const FeatureMaps<double> a = render_feature_maps(m.scene, m.attention.view(), cam);
        const FeatureMaps<double> b = render_feature_maps(permuted, m.attention.view(), cam);
        const double dp = std::max((a.albedo.data - b.albedo.data).cwiseAbs().maxCoeff(),
                                   (a.shading.data - b.shading.data).cwiseAbs().maxCoeff());
        worst_perm = std::max(worst_perm, dp);
        if (dp > 1e-12) ++perm_fail;
    }
    const double secs = seconds_since(t0);
    Outcome o{"A2", topk_fail + sum_fail + perm_fail + shift_fail == 0 && secs < 60.0};
    o.detail = fmt("%d instances: top-K mismatches %d, weight-sum failures %d (worst %.1e), permutation failures %d "
                   "(worst %.1e), tau-shift failures %d (worst %.1e), %.1f s",
                   instances, topk_fail, sum_fail, worst_sum, perm_fail, worst_perm, shift_fail, worst_shift, secs);
    o.data = {{"instances", instances}, {"worst_sum", worst_sum}, {"worst_perm", worst_perm}, {"worst_shift", worst_shift},
              {"seconds", secs}};
    return o;
}

// ---------------------------------------------------------------------------
// A3: reference training, shared with A4, A5, A9

const std::vector<int> kHeldOut = {3, 9, 15, 21};
constexpr int kReferenceIterations = 10000;

struct Reference {
    synth::SceneSpec spec;
    Dataset full;
    Dataset train;
    TrainConfig cfg;
    Checkpoint checkpoint;
    std::vector<double> losses;  // total loss per iteration
    double train_seconds = 0.0;
    bool cached = false;
};

Reference& reference(const std::string& cache_dir) {
    static std::unique_ptr<Reference> ref;
    if (ref) return *ref;
    ref = std::make_unique<Reference>();
    Reference& r = *ref;
    r.spec = synth::checker_orb();
    r.full = synth::generate_scene(r.spec);
    r.train = r.full;
    r.train.views.clear();
    for (int i = 0; i < int(r.full.views.size()); ++i)
        if (std::find(kHeldOut.begin(), kHeldOut.end(), i) == kHeldOut.end()) r.train.views.push_back(r.full.views[i]);
    r.cfg.iterations = kReferenceIterations;
    r.cfg.seed = 0;

    const std::string key = hex64(fnv1a(to_json(r.cfg).dump() + synth::to_json(r.spec).dump() + Json(kHeldOut).dump()));
    const fs::path ck_path = cache_dir.empty() ? fs::path() : fs::path(cache_dir) / ("reference-" + key + ".ckpt");
    const fs::path meta_path = cache_dir.empty() ? fs::path() : fs::path(cache_dir) / ("reference-" + key + ".json");
    if (!cache_dir.empty() && fs::exists(ck_path) && fs::exists(meta_path)) {
        r.checkpoint = load_checkpoint(ck_path);
        std::ifstream in(meta_path);
        const Json meta = Json::parse(in);
        r.losses = meta["losses"].get<std::vector<double>>();
        r.train_seconds = meta["train_seconds"];
        r.cached = true;
        return r;
    }
    std::fprintf(stderr, "training the reference model (%d iterations)...\n", r.cfg.iterations);
    const auto t0 = Clock::now();
    TrainHooks hooks;
    hooks.on_log = [&](const LogRecord& rec) {
        if (rec.iteration % 1000 == 0) std::fprintf(stderr, "  iteration %lld, %.0f s\n", (long long)rec.iteration, rec.wall_clock);
    };
    TrainResult result = train(r.train, r.cfg, hooks);
    r.train_seconds = seconds_since(t0);
    r.checkpoint = std::move(result.checkpoint);
    for (const auto& rec : result.log) r.losses.push_back(rec.loss.total);
    if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        save_checkpoint(r.checkpoint, ck_path);
        std::ofstream(meta_path) << Json{{"losses", r.losses}, {"train_seconds", r.train_seconds}}.dump() << '\n';
    }
    return r;
}

double trailing_mean(const std::vector<double>& v, std::size_t end, std::size_t window) {
    const std::size_t begin = end >= window ? end - window : 0;
    return std::accumulate(v.begin() + long(begin), v.begin() + long(end), 0.0) / double(end - begin);
}

Outcome check_a3(Reference& r) {
    Image<double> mean_color(r.spec.height, r.spec.width, 3), mean_albedo(r.spec.height, r.spec.width, 3);
    mean_color.data.setZero();
    mean_albedo.data.setZero();
    for (const auto& v : r.train.views) {
        mean_color.data += v.color.data.cast<double>();
        mean_albedo.data += v.albedo.data.cast<double>();
    }
    mean_color.data /= double(r.train.views.size());
    mean_albedo.data /= double(r.train.views.size());

    double pc = 0, pa = 0, bc = 0, ba = 0;
    Json per_view = Json::array();
    for (int i : kHeldOut) {
        const ViewRecord& v = r.full.views[i];
        const RenderOutput<float> out = render_view(r.checkpoint.model, v.camera);
        const double c = eval::psnr(to_double(out.color_linear(r.full.log_eps)), to_double(v.color));
        const double a = eval::psnr(to_double(out.albedo_linear(r.full.log_eps)), to_double(v.albedo));
        const double c0 = eval::psnr(mean_color, to_double(v.color));
        const double a0 = eval::psnr(mean_albedo, to_double(v.albedo));
        per_view.push_back({{"view", i}, {"color", c}, {"albedo", a}, {"color_baseline", c0}, {"albedo_baseline", a0}});
        pc += c, pa += a, bc += c0, ba += a0;
    }
    const double n = double(kHeldOut.size());
    pc /= n, pa /= n, bc /= n, ba /= n;
    const double early = trailing_mean(r.losses, 100, 100);
    const double late = trailing_mean(r.losses, r.losses.size(), 100);
    const double ratio = late / early;
    const bool pass = pc - bc >= 6.0 && pa - ba >= 6.0 && ratio <= 0.1 && r.train_seconds <= 7200.0;
    Outcome o{"A3", pass};
    o.detail = fmt("held-out color PSNR %.2f vs baseline %.2f (+%.2f dB), albedo %.2f vs %.2f (+%.2f dB); "
                   "smoothed loss %.4f at %zu / %.4f at 100 = %.3f; %zu iterations in %.0f s%s",
                   pc, bc, pc - bc, pa, ba, pa - ba, late, r.losses.size(), early, ratio, r.losses.size(),
                   r.train_seconds, r.cached ? " (cached model)" : "");
    o.data = {{"color_psnr", pc}, {"color_baseline", bc}, {"albedo_psnr", pa}, {"albedo_baseline", ba},
              {"loss_ratio", ratio}, {"train_seconds", r.train_seconds}, {"views", per_view}};
    return o;
}

// ---------------------------------------------------------------------------
// A4

Outcome check_a4(Reference& r) {
    const Model<float>& m = r.checkpoint.model;
    std::vector<Camera> cams;
    for (int i : {0, 3, 11}) cams.push_back(r.full.views[i].camera);
    auto render_all = [&](const PointScene<float>& s) {
        std::vector<RenderOutput<float>> out;
        for (const Camera& c : cams) out.push_back(render_view(s, m.attention.view(), m.decoders.view(), c));
        return out;
    };
    const auto base = render_all(m.scene);
    auto same = [&](const std::vector<RenderOutput<float>>& x, bool albedo_only) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i].albedo.data != base[i].albedo.data) return false;
            if (!albedo_only && x[i].color.data != base[i].color.data) return false;
        }
        return true;
    };

    const bool scale_identity = same(render_all(apply_edit(m.scene, ShadingScale{std::nullopt, 1.0})), false);
    bool self_identity = true;
    for (Eigen::Index p : {Eigen::Index(0), m.scene.size() / 2, m.scene.size() - 1})
        self_identity = self_identity && same(render_all(apply_edit(m.scene, AlbedoTransfer{p, {p}})), false);

    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> scale(0.0, 3.0);
    std::uniform_int_distribution<Eigen::Index> point(0, m.scene.size() - 1);
    // The absolute bound is asserted on the double instantiation. Float features
    // reach magnitudes where 1e-7 is below one ulp, so there the bound is relative.
    const PointScene<double> md = m.scene.cast<double>();
    double worst_comp = 0.0, worst_ulps = 0.0;
    for (int t = 0; t < 50; ++t) {
        const double s1 = scale(rng), s2 = scale(rng);
        std::optional<PointIds> targets;
        if (t % 2) {
            targets.emplace();
            for (int j = 0; j < 40; ++j) targets->push_back(point(rng));
        }
        const PointScene<double> a = apply_edit(apply_edit(md, ShadingScale{targets, s1}), ShadingScale{targets, s2});
        const PointScene<double> b = apply_edit(md, ShadingScale{targets, s1 * s2});
        worst_comp = std::max(worst_comp, (a.shading_features - b.shading_features).cwiseAbs().maxCoeff());
        const PointScene<float> af = apply_edit(apply_edit(m.scene, ShadingScale{targets, s1}), ShadingScale{targets, s2});
        const PointScene<float> bf = apply_edit(m.scene, ShadingScale{targets, s1 * s2});
        for (Eigen::Index k = 0; k < af.shading_features.size(); ++k) {
            const float x = af.shading_features.data()[k], y = bf.shading_features.data()[k];
            const float ulp = std::nextafter(std::max(std::abs(x), std::abs(y)), INFINITY) - std::max(std::abs(x), std::abs(y));
            if (x != y) worst_ulps = std::max(worst_ulps, double(std::abs(x - y)) / double(ulp));
        }
    }

    bool albedo_invariant = true;
    const std::vector<EditOp> shading_ops{ShadingScale{std::nullopt, 0.4}, ShadingScale{std::nullopt, 2.5},
                                          ShadingScale{select_region(m.scene, 5, 0.5), 0.1},
                                          ShadingTransfer{7, select_region(m.scene, 100, 0.6)}};
    for (const EditOp& op : shading_ops) albedo_invariant = albedo_invariant && same(render_all(apply_edit(m.scene, op)), true);

    Outcome o{"A4", scale_identity && self_identity && worst_comp <= 1e-7 && worst_ulps <= 4.0 && albedo_invariant};
    o.detail = fmt("ShadingScale(1, all) bit-identical: %s; self AlbedoTransfer bit-identical: %s; composition worst "
                   "%.1e in double (tol 1e-7), %.1f ulp in float (tol 4) over 50 pairs; albedo render bit-identical after %zu shading edits: %s",
                   scale_identity ? "yes" : "no", self_identity ? "yes" : "no", worst_comp, worst_ulps, shading_ops.size(),
                   albedo_invariant ? "yes" : "no");
    o.data = {{"composition_error", worst_comp}, {"composition_ulps_float", worst_ulps}};
    return o;
}

// ---------------------------------------------------------------------------
// A5 and A8: oracle transfer evaluation

int solid_sphere(const synth::SceneSpec& spec) {
    for (std::size_t i = 0; i < spec.spheres.size(); ++i)
        if (spec.spheres[i].texture.kind == synth::Texture::Kind::Solid) return int(i);
    throw Error("scene has no solid sphere");
}

/// Pixel of the sphere point facing the camera.
eval::Pixel sphere_front_pixel(const synth::SceneSpec& spec, int sphere, const Camera& cam) {
    const auto& s = spec.spheres[sphere];
    const Eigen::Vector3d p = s.center + s.radius * (cam.center() - s.center).normalized();
    const Eigen::Vector3d px = cam.project(p);
    return {int(std::floor(px.y())), int(std::floor(px.x()))};
}

/// 3x3 block centred on `center` if every pixel sees `primitive` with one albedo.
std::optional<std::vector<eval::Pixel>> uniform_block(const synth::IntrinsicImages& gt, const synth::SceneSpec& spec,
                                                      const Camera& cam, eval::Pixel center, int primitive) {
    std::vector<eval::Pixel> block;
    for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
            const eval::Pixel p{center.row + dr, center.col + dc};
            if (p.row < 0 || p.col < 0 || p.row >= cam.height || p.col >= cam.width) return std::nullopt;
            const auto hit = synth::trace(spec, pixel_ray(cam, p.row, p.col));
            if (!hit || hit->primitive != primitive) return std::nullopt;
            const Eigen::Index j = gt.albedo.index(p.row, p.col);
            if (gt.albedo.data.col(j) != gt.albedo.data.col(gt.albedo.index(center.row, center.col))) return std::nullopt;
            if (gt.shading.data.col(j).minCoeff() < eval::kShadingFloor) return std::nullopt;
            block.push_back(p);
        }
    }
    return block;
}

/// Ground checker cell whose centre projects closest to the principal point and
/// whose 3x3 pixel block lies inside that cell.
std::vector<eval::Pixel> ground_cell_block(const synth::IntrinsicImages& gt, const synth::SceneSpec& spec, const Camera& cam) {
    const synth::Box& g = spec.boxes.at(0);
    const double s = g.texture.scale;
    std::optional<std::vector<eval::Pixel>> best;
    double best_d = 1e300;
    for (double x = std::floor(g.lower.x() / s) * s + 0.5 * s; x < g.upper.x(); x += s) {
        for (double z = std::floor(g.lower.z() / s) * s + 0.5 * s; z < g.upper.z(); z += s) {
            const Eigen::Vector3d px = cam.project({x, g.upper.y(), z});
            if (!(px.z() > 0)) continue;
            const eval::Pixel c{int(std::floor(px.y())), int(std::floor(px.x()))};
            auto block = uniform_block(gt, spec, cam, c, int(spec.spheres.size()));
            const double d = (px.head<2>() - cam.principal).norm();
            if (block && d < best_d) best = std::move(block), best_d = d;
        }
    }
    if (!best) throw Error("no ground cell block is visible");
    return *best;
}

PointIds rays_topk_union(const PointScene<float>& scene, int k, const Camera& cam, const std::vector<eval::Pixel>& pixels) {
    std::set<Eigen::Index> ids;
    for (const auto& p : pixels)
        for (Eigen::Index i : select_topk(scene.positions, render_ray<float>(cam, p.row, p.col), k)) ids.insert(i);
    return {ids.begin(), ids.end()};
}

Image<double> with_pixels(Image<double> img, const std::vector<eval::Pixel>& pixels, const Eigen::VectorXd& value) {
    for (const auto& p : pixels) img.data.col(img.index(p.row, p.col)) = value;
    return img;
}

struct EditScores {
    double transfer = 0.0;
    double decoupling = 0.0;
    double preservation = 0.0;
};

/// The oracle holds the component that the edit should leave alone: for an
/// albedo transfer, A_T = I_T / S with the scene's shading, and the shading
/// after the edit is I_T divided by the intended albedo (source albedo on the
/// targets). Shading transfers mirror this.
EditScores score_edit(FeatureKind kind, const Image<double>& before, const Image<double>& after,
                      const synth::IntrinsicImages& gt, const eval::Pixel& source, const Eigen::VectorXd& source_value,
                      const std::vector<eval::Pixel>& targets) {
    const Eigen::Index s = gt.albedo.index(source.row, source.col);
    eval::Decomposition transferred, comp_before, comp_after;
    Image<double> x;
    if (kind == FeatureKind::Albedo) {
        transferred = eval::divide_by_shading(after, gt.shading);
        x = transferred.albedo;
        comp_before = eval::divide_by_albedo(before, gt.albedo);
        comp_after = eval::divide_by_albedo(after, with_pixels(gt.albedo, targets, gt.albedo.data.col(s)));
    } else {
        transferred = eval::divide_by_albedo(after, gt.albedo);
        x = transferred.shading;
        comp_before = eval::divide_by_shading(before, gt.shading);
        comp_after = eval::divide_by_shading(after, with_pixels(gt.shading, targets, gt.shading.data.col(s)));
    }
    const Image<double>& cb = kind == FeatureKind::Albedo ? comp_before.shading : comp_before.albedo;
    const Image<double>& ca = kind == FeatureKind::Albedo ? comp_after.shading : comp_after.albedo;
    // the source value is written into the source pixel so the mean-over-targets
    // rule of transfer_error applies unchanged, also across scenes
    x.data.col(s) = source_value;
    Mask valid = transferred.valid;
    valid[s] = true;
    const eval::TransferReport rep = eval::make_report(x, valid, cb, comp_before.valid, ca, comp_after.valid, before,
                                                       after, source, targets);
    return {rep.transfer_error, rep.decoupling_error, rep.preservation_error};
}

Eigen::VectorXd component_at(FeatureKind kind, const Image<double>& image, const synth::IntrinsicImages& gt,
                             const eval::Pixel& p) {
    const Eigen::Index j = gt.albedo.index(p.row, p.col);
    return kind == FeatureKind::Albedo ? Eigen::VectorXd(image.data.col(j).cwiseQuotient(gt.shading.data.col(j)))
                                       : Eigen::VectorXd(image.data.col(j).cwiseQuotient(gt.albedo.data.col(j)));
}

Outcome check_a5(Reference& r) {
    const int view = 0;
    const Camera cam = r.full.views[view].camera;
    const synth::IntrinsicImages gt = synth::render_intrinsics(r.spec, cam);
    const int ball = solid_sphere(r.spec);
    const eval::Pixel source = sphere_front_pixel(r.spec, ball, cam);
    if (auto hit = synth::trace(r.spec, pixel_ray(cam, source.row, source.col)); !hit || hit->primitive != ball)
        throw Error("A5 source pixel does not see the solid sphere");
    const std::vector<eval::Pixel> targets = ground_cell_block(gt, r.spec, cam);

    const Model<float>& m = r.checkpoint.model;
    const Eigen::Index source_point = pick_point(m.scene, m.attention.view(), cam, source.row, source.col);
    const PointIds target_points = rays_topk_union(m.scene, m.attention.k, cam, targets);
    auto render_color = [&](const PointScene<float>& s) {
        return to_double(render_view(s, m.attention.view(), m.decoders.view(), cam).color_linear(r.checkpoint.log_eps));
    };
    const Image<double> model_before = render_color(m.scene);
    const Image<double> gt_color = to_double(r.full.views[view].color);
    const Image<double> naive_after = with_pixels(gt_color, targets, gt_color.data.col(gt_color.index(source.row, source.col)));

    bool pass = true;
    std::string detail;
    Json data = Json::object();
    for (FeatureKind kind : {FeatureKind::Albedo, FeatureKind::Shading}) {
        const EditOp op = kind == FeatureKind::Albedo ? EditOp(AlbedoTransfer{source_point, target_points})
                                                      : EditOp(ShadingTransfer{source_point, target_points});
        const Image<double> model_after = render_color(apply_edit(m.scene, op));
        const EditScores model = score_edit(kind, model_before, model_after, gt, source,
                                            component_at(kind, model_after, gt, source), targets);
        const EditScores naive = score_edit(kind, gt_color, naive_after, gt, source,
                                            component_at(kind, naive_after, gt, source), targets);
        const bool ok = model.transfer <= 0.5 * naive.transfer && model.decoupling <= 0.5 * naive.decoupling;
        pass = pass && ok;
        const char* name = kind == FeatureKind::Albedo ? "albedo" : "shading";
        detail += fmt("%s%s transfer: transfer err %.4f vs naive %.4f (%.0f%%), decoupling err %.4f vs naive %.4f (%.0f%%)",
                      detail.empty() ? "" : "; ", name, model.transfer, naive.transfer,
                      100.0 * model.transfer / naive.transfer, model.decoupling, naive.decoupling,
                      100.0 * model.decoupling / naive.decoupling);
        data[name] = {{"model", {{"transfer", model.transfer}, {"decoupling", model.decoupling}, {"preservation", model.preservation}}},
                      {"naive", {{"transfer", naive.transfer}, {"decoupling", naive.decoupling}, {"preservation", naive.preservation}}}};
    }
    data["source_pixel"] = {source.row, source.col};
    data["source_point"] = source_point;
    data["target_points"] = target_points.size();
    Json tp = Json::array();
    for (const auto& p : targets) tp.push_back({p.row, p.col});
    data["target_pixels"] = tp;
    Outcome o{"A5", pass};
    o.detail = fmt("view %d, source pixel (%d, %d), %zu target pixels / %zu target points: ", view, source.row,
                   source.col, targets.size(), target_points.size()) + detail;
    o.data = data;
    return o;
}

// ---------------------------------------------------------------------------
// A6

Outcome check_a6() {
    std::mt19937_64 rng(66);
    std::uniform_int_distribution<int> size(11, 40);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    double worst_psnr = 0.0, worst_ssim = 0.0;
    for (int pair = 0; pair < 100; ++pair) {
        const int h = size(rng), w = size(rng);
        Image<double> gt(h, w, 3), pred(h, w, 3);
        for (Eigen::Index i = 0; i < gt.data.size(); ++i) gt.data.data()[i] = u(rng);
        const double sigma = 0.02 + 0.3 * u(rng);
        for (Eigen::Index i = 0; i < gt.data.size(); ++i)
            pred.data.data()[i] = std::clamp(gt.data.data()[i] + sigma * noise(rng), 0.0, 1.0);
        worst_psnr = std::max(worst_psnr, std::abs(eval::psnr(pred, gt) - double(fixtures::ref_psnr(pred, gt))));
        worst_ssim = std::max(worst_ssim, std::abs(eval::ssim(pred, gt) - double(fixtures::ref_ssim(pred, gt))));
    }
    Image<double> same(16, 16, 3);
    for (Eigen::Index i = 0; i < same.data.size(); ++i) same.data.data()[i] = u(rng);
    const bool sentinel = std::isinf(eval::psnr(same, same)) && eval::psnr(same, same) > 0;
    const double self_ssim = eval::ssim(same, same);

    // vertical step 0 | 1 between columns 2 and 3: |Gx| = 1 + 2 + 1 on both sides
    Image<double> step(5, 6, 1);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) step.at(r, c, 0) = c >= 3 ? 1.0 : 0.0;
    const Image<double> sob = eval::sobel_magnitude(step);
    bool sobel_exact = true;
    const double expected[6] = {0, 0, 4, 4, 0, 0};
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) sobel_exact = sobel_exact && sob.at(r, c, 0) == expected[c];

    Outcome o{"A6", worst_psnr <= 1e-9 && worst_ssim <= 1e-6 && sentinel && std::abs(self_ssim - 1.0) <= 1e-12 && sobel_exact};
    o.detail = fmt("100 pairs: worst PSNR diff %.1e (tol 1e-9), worst SSIM diff %.1e (tol 1e-6); identical images give "
                   "PSNR %s and SSIM %.15f; Sobel step exact: %s",
                   worst_psnr, worst_ssim, sentinel ? "+inf" : "finite", self_ssim, sobel_exact ? "yes" : "no");
    o.data = {{"worst_psnr", worst_psnr}, {"worst_ssim", worst_ssim}};
    return o;
}

// ---------------------------------------------------------------------------
// A7

Outcome check_a7() {
    double worst_identity = 0.0, worst_cross = 0.0;
    long comparisons = 0, pixels = 0;
    const std::vector<synth::SceneSpec> specs{synth::checker_orb(), fixtures::tiny_pair_scene(32, 6)};
    for (const synth::SceneSpec& spec : specs) {
        const Dataset generated = synth::generate_scene(spec);
        const fixtures::TempDir dir;
        save_dataset(generated, dir.path(), ImageFormat::Pfm);
        const Dataset ds = load_dataset(dir.path());
        for (const ViewRecord& v : ds.views) {
            if (!v.shading) throw Error("float export has no shading image");
            const Matrix<double> prod = v.albedo.data.cast<double>().cwiseProduct(v.shading->data.cast<double>());
            worst_identity = std::max(worst_identity, (prod - v.color.data.cast<double>()).cwiseAbs().maxCoeff());
            pixels += v.color.pixels();
        }
        const auto cams = ds.cameras();
        for (std::size_t i = 0; i < cams.size(); ++i) {
            for (int r = 0; r < cams[i].height; r += 2) {
                for (int c = 0; c < cams[i].width; c += 2) {
                    const auto hit = synth::trace(spec, pixel_ray(cams[i], r, c));
                    if (!hit) continue;
                    const Eigen::Vector3d stored = ds.views[i].albedo.data.col(ds.views[i].albedo.index(r, c)).cast<double>();
                    for (std::size_t j = 0; j < cams.size(); j += 5) {
                        if (j == i) continue;
                        const Eigen::Vector3d o = cams[j].center();
                        const Eigen::Vector3d to_p = hit->point - o;
                        const auto other = synth::trace(spec, {o, to_p.normalized()});
                        if (!other || other->primitive != hit->primitive || std::abs(other->t - to_p.norm()) > 1e-9) continue;
                        const Eigen::Vector3d px = cams[j].project(hit->point);
                        if (px.x() < 0 || px.y() < 0 || px.x() >= cams[j].width || px.y() >= cams[j].height) continue;
                        worst_cross = std::max(worst_cross, (synth::albedo_at(spec, *other) - stored).cwiseAbs().maxCoeff());
                        ++comparisons;
                    }
                }
            }
        }
    }
    Outcome o{"A7", worst_identity <= 1e-6 && worst_cross <= 1e-6 && comparisons > 1000};
    o.detail = fmt("%zu scenes, %ld pixels: worst |A*S - I| %.1e; %ld cross-view albedo comparisons, worst %.1e (tol 1e-6)",
                   specs.size(), pixels, worst_identity, comparisons, worst_cross);
    o.data = {{"identity", worst_identity}, {"cross_view", worst_cross}, {"comparisons", comparisons}};
    return o;
}

// ---------------------------------------------------------------------------
// A8

TrainConfig joint_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.seed = seed;
    cfg.num_points = 512;
    cfg.model.attention.hidden = {32, 32};
    cfg.model.unet_depth = 2;
    cfg.model.unet_base_width = 8;
    return cfg;
}

Outcome check_a8() {
    const auto t0 = Clock::now();
    const synth::SceneSpec spec_a = fixtures::tiny_orb(32, 8), spec_b = fixtures::tiny_pair_scene(32, 8);
    const Dataset a = synth::generate_scene(spec_a), b = synth::generate_scene(spec_b);
    JointResult jr = joint_train(a, joint_config(1), b, joint_config(2));

    const fixtures::TempDir dir;
    save_checkpoint(jr.checkpoints[0], dir / "a.ckpt");
    save_checkpoint(jr.checkpoints[1], dir / "b.ckpt");
    Checkpoint ca = load_checkpoint(dir / "a.ckpt"), cb = load_checkpoint(dir / "b.ckpt");
    const bool shared = same_params(ca.model.attention.albedo_value, cb.model.attention.albedo_value) &&
                        same_params(ca.model.attention.shading_value, cb.model.attention.shading_value) &&
                        same_params(ca.model.decoders.albedo, cb.model.decoders.albedo);
    const bool distinct = !same_params(ca.model.attention.key, cb.model.attention.key);

    // source: front of scene A's solid sphere; targets: 3x3 block on scene B's sphere
    const Camera cam_a = a.views[0].camera, cam_b = b.views[0].camera;
    const synth::IntrinsicImages gt_a = synth::render_intrinsics(spec_a, cam_a);
    const synth::IntrinsicImages gt_b = synth::render_intrinsics(spec_b, cam_b);
    const eval::Pixel source = sphere_front_pixel(spec_a, solid_sphere(spec_a), cam_a);
    const int sphere_b = solid_sphere(spec_b);
    const auto block = uniform_block(gt_b, spec_b, cam_b, sphere_front_pixel(spec_b, sphere_b, cam_b), sphere_b);
    if (!block) throw Error("A8 target block is not on one surface");

    const Model<float>& ma = ca.model;
    const Model<float>& mb = cb.model;
    const Eigen::Index source_point = pick_point(ma.scene, ma.attention.view(), cam_a, source.row, source.col);
    const PointIds targets = rays_topk_union(mb.scene, mb.attention.k, cam_b, *block);

    PointScene<float> src = ma.scene, dst = mb.scene;
    src.version_id = 0;
    dst.version_id = 1;
    const PointScene<float> edited =
        apply_cross_scene(src, dst, CrossSceneTransfer{0, source_point, 1, targets, FeatureKind::Albedo});
    auto color = [&](const Model<float>& m, const PointScene<float>& s, const Camera& c) {
        return to_double(render_view(s, m.attention.view(), m.decoders.view(), c).color_linear(ca.log_eps));
    };
    const Image<double> before = color(mb, mb.scene, cam_b), after = color(mb, edited, cam_b);
    const Image<double> render_a = color(ma, ma.scene, cam_a);
    const EditScores model = score_edit(FeatureKind::Albedo, before, after, gt_b, (*block)[4],
                                        component_at(FeatureKind::Albedo, render_a, gt_a, source), *block);

    const Image<double> color_a = to_double(a.views[0].color), color_b = to_double(b.views[0].color);
    const Image<double> naive_after = with_pixels(color_b, *block, color_a.data.col(color_a.index(source.row, source.col)));
    const EditScores naive = score_edit(FeatureKind::Albedo, color_b, naive_after, gt_b, (*block)[4],
                                        component_at(FeatureKind::Albedo, color_a, gt_a, source), *block);
    const double secs = seconds_since(t0);
    Outcome o{"A8", shared && distinct && model.transfer <= naive.transfer};
    o.detail = fmt("joint run of %d iterations in %.0f s; value MLPs and albedo decoder bit-equal across checkpoints: %s; "
                   "per-scene key MLPs differ: %s; cross-scene albedo transfer err %.4f vs naive %.4f",
                   joint_config(1).iterations, secs, shared ? "yes" : "no", distinct ? "yes" : "no", model.transfer,
                   naive.transfer);
    o.data = {{"model_transfer", model.transfer}, {"naive_transfer", naive.transfer}, {"seconds", secs},
              {"target_points", targets.size()}};
    return o;
}

// ---------------------------------------------------------------------------
// A9

Outcome check_a9(Reference& r) {
    const Dataset ds = synth::generate_scene(fixtures::tiny_orb(16, 4));
    TrainConfig cfg = fixtures::micro_train_config(60, 9, 64);
    const TrainResult x = train(ds, cfg), y = train(ds, cfg);
    bool logs_equal = x.log.size() == y.log.size();
    for (std::size_t i = 0; logs_equal && i < x.log.size(); ++i) {
        const LogRecord &p = x.log[i], &q = y.log[i];
        logs_equal = p.iteration == q.iteration && p.view == q.view && p.loss.total == q.loss.total &&
                     p.loss.color == q.loss.color && p.loss.albedo == q.loss.albedo;
    }
    const bool models_equal = serialize_checkpoint(x.checkpoint) == serialize_checkpoint(y.checkpoint);

    // edits through the service, then replay of the exported log onto the root
    const Service service({r.checkpoint});
    std::uint64_t v = service.root(0);
    const Eigen::Index n = r.checkpoint.model.scene.size();
    const std::vector<Json> ops{
        {{"type", "albedo_transfer"}, {"source", 10}, {"targets", select_region(r.checkpoint.model.scene, 20, 0.3)}},
        {{"type", "shading_scale"}, {"targets", "all"}, {"scale", 0.8}},
        {{"type", "albedo_blend"}, {"sources", {1, 2, 3}}, {"weights", {0.2, 0.3, 0.5}}, {"targets", {n - 1, n - 2}}},
        {{"type", "shading_transfer"}, {"source", 5}, {"targets", {6, 7, 8}}},
        {{"type", "shading_scale"}, {"targets", {9, 10}}, {"scale", 1.7}}};
    for (const Json& op : ops) {
        const Service::Response resp = service.handle("POST", "/edit", Json{{"version", v}, {"op", op}}.dump());
        if (resp.status != 200) throw Error("service edit failed: " + resp.body.dump());
        v = resp.body["version"];
    }
    const Service::Response log = service.handle("GET", "/version/" + std::to_string(v) + "/log", "");
    const PointScene<float> replayed = replay_log(r.checkpoint.model.scene, Json::parse(log.body["log"].dump()));
    const auto& served = *service.versions().get(v)->scene;
    const bool replay_equal = replayed.albedo_features == served.albedo_features &&
                              replayed.shading_features == served.shading_features &&
                              replayed.positions == served.positions && replayed.influence == served.influence;

    const std::string bytes = serialize_checkpoint(r.checkpoint);
    const Checkpoint back = parse_checkpoint(bytes);
    const bool roundtrip = serialize_checkpoint(back) == bytes && back.model.scene.positions == r.checkpoint.model.scene.positions &&
                           back.optimizer.step == r.checkpoint.optimizer.step;

    Outcome o{"A9", logs_equal && models_equal && replay_equal && roundtrip};
    o.detail = fmt("two %d-iteration runs with seed %llu: logs bit-identical %s, checkpoints bit-identical %s; "
                   "%zu service edits replayed from the log: features bit-identical %s; reference checkpoint "
                   "(%zu bytes) round trip bit-exact %s",
                   cfg.iterations, (unsigned long long)cfg.seed, logs_equal ? "yes" : "no", models_equal ? "yes" : "no",
                   ops.size(), replay_equal ? "yes" : "no", bytes.size(), roundtrip ? "yes" : "no");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria A1-A9"};
    std::string only, cache_dir, report_path;
    app.add_option("--only", only, "Comma-separated subset, e.g. A3,A5");
    app.add_option("--cache-dir", cache_dir, "Reuse the trained reference model from this directory");
    app.add_option("--report", report_path, "Write all results as JSON");
    CLI11_PARSE(app, argc, argv);

    std::set<std::string> selected;
    for (std::size_t p = 0; p < only.size();) {
        const std::size_t q = std::min(only.find(',', p), only.size());
        selected.insert(only.substr(p, q - p));
        p = q + 1;
    }
    auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id); };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
        {"A1", check_a1},
        {"A2", check_a2},
        {"A3", [&] { return check_a3(reference(cache_dir)); }},
        {"A4", [&] { return check_a4(reference(cache_dir)); }},
        {"A5", [&] { return check_a5(reference(cache_dir)); }},
        {"A6", check_a6},
        {"A7", check_a7},
        {"A8", check_a8},
        {"A9", [&] { return check_a9(reference(cache_dir)); }},
    };
    bool all = true;
    Json report = Json::object();
    for (const auto& [id, run] : checks) {
        if (!wanted(id)) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {id, false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("%s %s  %s\n", o.id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        report[id] = {{"pass", o.pass}, {"detail", o.detail}, {"data", o.data}};
    }
    if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << '\n';
    return all ? 0 : 1;
}
