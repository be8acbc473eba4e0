// Command-line entry points: datagen, train, render, edit, eval, serve, export-features.

#include "ipapr/checkpoint.hpp"
#include "ipapr/datagen.hpp"
#include "ipapr/editing.hpp"
#include "ipapr/evalkit.hpp"
#include "ipapr/image_io.hpp"
#include "ipapr/service.hpp"
#include "ipapr/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ipapr;

namespace {

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const std::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

Camera pick_camera(const Checkpoint& ck, int index, const std::string& camera_file) {
    if (!camera_file.empty()) return camera_from_json(read_json(camera_file));
    if (index < 0 || index >= int(ck.cameras.size()))
        throw Error("camera index " + std::to_string(index) + " out of range (checkpoint has " +
                    std::to_string(ck.cameras.size()) + " cameras)");
    return ck.cameras[index];
}

/// Applies an edit log (as exported by the service or by `edit`) to the checkpoint scene.
void apply_log(Checkpoint& ck, const std::string& log_file) {
    if (log_file.empty()) return;
    Json log = read_json(log_file);
    if (log.is_object() && log.contains("log")) log = log["log"];
    ck.model.scene = replay_log(ck.model.scene, log);
}

struct Options {
    bool json = false;
    std::uint64_t seed = 0;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-based intrinsic scene fitting, rendering and editing"};
    app.require_subcommand(1);
    Options opt;
    app.add_flag("--json", opt.json, "Machine-readable JSON errors on stderr");
    app.add_option("--seed", opt.seed, "Random seed");

    // datagen
    auto* gen = app.add_subcommand("datagen", "Render a synthetic multi-view dataset with exact A, S and I");
    std::string gen_scene = "checker-orb", gen_spec, gen_out, gen_format = "pfm";
    bool gen_shadows = false;
    gen->add_option("--scene", gen_scene, "Built-in scene name")->check(CLI::IsMember({"checker-orb"}));
    gen->add_option("--spec", gen_spec, "Scene description JSON (overrides --scene)");
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--format", gen_format, "Image format for color and albedo")->check(CLI::IsMember({"pfm", "png"}));
    gen->add_flag("--shadows", gen_shadows, "Enable hard shadows");
    gen->add_option("--seed", opt.seed, "Random seed");

    // train
    auto* tr = app.add_subcommand("train", "Fit a point scene and decoders to a dataset");
    std::string tr_data, tr_config, tr_out, tr_log, tr_joint_data, tr_joint_out, tr_joint_config;
    TrainConfig tc;
    std::optional<int> tr_iterations, tr_points, tr_k, tr_ckpt_every, tr_unet_width, tr_unet_depth;
    std::optional<double> lr_points, lr_features, lr_influence, lr_mlps, lr_decoders, lambda_mse, lambda_perc,
        prune_threshold;
    std::optional<std::string> tr_perceptual, tr_ckpt_dir;
    std::optional<bool> prune_enabled;
    std::optional<int> prune_every, prune_start;
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--config", tr_config, "Train config JSON; flags override its fields");
    tr->add_option("--out", tr_out, "Output checkpoint")->required();
    tr->add_option("--log", tr_log, "Newline-delimited JSON training log");
    tr->add_option("--joint-data", tr_joint_data, "Second dataset; trains both scenes with shared value MLPs and albedo decoder");
    tr->add_option("--joint-out", tr_joint_out, "Checkpoint of the second scene");
    tr->add_option("--joint-config", tr_joint_config, "Train config of the second scene (default: the first's, seed + 1)");
    tr->add_option("--iterations", tr_iterations);
    tr->add_option("--num-points", tr_points);
    tr->add_option("--k", tr_k);
    tr->add_option("--unet-base-width", tr_unet_width);
    tr->add_option("--unet-depth", tr_unet_depth);
    tr->add_option("--lr-points", lr_points);
    tr->add_option("--lr-features", lr_features);
    tr->add_option("--lr-influence", lr_influence);
    tr->add_option("--lr-mlps", lr_mlps);
    tr->add_option("--lr-decoders", lr_decoders);
    tr->add_option("--lambda-mse", lambda_mse);
    tr->add_option("--lambda-perc", lambda_perc);
    tr->add_option("--perceptual", tr_perceptual);
    tr->add_option("--prune", prune_enabled);
    tr->add_option("--prune-threshold", prune_threshold);
    tr->add_option("--prune-every", prune_every);
    tr->add_option("--prune-start", prune_start);
    tr->add_option("--checkpoint-every", tr_ckpt_every);
    tr->add_option("--checkpoint-dir", tr_ckpt_dir);
    tr->add_option("--seed", opt.seed, "Random seed");

    // render
    auto* rd = app.add_subcommand("render", "Render a view of a checkpoint to PNG (or PFM)");
    std::string rd_ckpt, rd_camera, rd_out, rd_output = "color", rd_edits;
    int rd_index = 0;
    rd->add_option("--checkpoint", rd_ckpt)->required();
    rd->add_option("--camera-index", rd_index, "Training camera index");
    rd->add_option("--camera", rd_camera, "Camera JSON (overrides --camera-index)");
    rd->add_option("--output", rd_output)->check(CLI::IsMember({"color", "albedo"}));
    rd->add_option("--edits", rd_edits, "Edit log to replay before rendering");
    rd->add_option("--out", rd_out)->required();
    rd->add_option("--seed", opt.seed, "Random seed");

    // edit
    auto* ed = app.add_subcommand("edit", "Apply an edit op to a checkpoint scene");
    std::string ed_ckpt, ed_op, ed_out, ed_log;
    ed->add_option("--checkpoint", ed_ckpt)->required();
    ed->add_option("--op", ed_op, "EditOp JSON file (object or array of objects)")->required();
    ed->add_option("--out", ed_out, "Edited checkpoint")->required();
    ed->add_option("--log", ed_log, "Where to write the edit log");
    ed->add_option("--seed", opt.seed, "Random seed");

    // eval
    auto* ev = app.add_subcommand("eval", "Image metrics (PSNR, SSIM)");
    std::string ev_pred, ev_gt, ev_ckpt, ev_data;
    std::vector<int> ev_views;
    ev->add_option("--pred", ev_pred, "Predicted image");
    ev->add_option("--gt", ev_gt, "Ground-truth image");
    ev->add_option("--checkpoint", ev_ckpt, "Evaluate renders of this checkpoint");
    ev->add_option("--data", ev_data, "against the views of this dataset");
    ev->add_option("--views", ev_views, "View indices (default: all)");
    ev->add_option("--seed", opt.seed, "Random seed");

    // serve
    auto* sv = app.add_subcommand("serve", "HTTP editing/rendering service");
    std::vector<std::string> sv_ckpts;
    std::string sv_bind;
    sv->add_option("--checkpoint", sv_ckpts, "Checkpoint(s); jointly trained pairs enable cross-scene edits")->required();
    sv->add_option("--bind", sv_bind, "host:port (default $IPAPR_BIND or 127.0.0.1:8080)");
    sv->add_option("--seed", opt.seed, "Random seed");

    // export-features
    auto* ex = app.add_subcommand("export-features", "CSV of albedo features of points visible in a view");
    std::string ex_ckpt, ex_camera, ex_out;
    int ex_index = 0;
    ex->add_option("--checkpoint", ex_ckpt)->required();
    ex->add_option("--camera-index", ex_index);
    ex->add_option("--camera", ex_camera);
    ex->add_option("--out", ex_out)->required();
    ex->add_option("--seed", opt.seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (opt.json && e.get_exit_code() != 0) {
            std::cerr << Json{{"error", e.what()}, {"kind", "usage"}}.dump() << '\n';
            return e.get_exit_code();
        }
        return app.exit(e);
    }

    try {
        if (gen->parsed()) {
            synth::SceneSpec spec = gen_spec.empty() ? synth::checker_orb()
                                                     : synth::scene_spec_from_json(read_json(gen_spec), fs::path(gen_spec).parent_path());
            if (gen->count("--seed") || app.count("--seed")) spec.seed = opt.seed;
            if (gen_shadows) spec.shadows = true;
            const Dataset ds = synth::generate_scene(spec);
            save_dataset(ds, gen_out, gen_format == "png" ? ImageFormat::Png : ImageFormat::Pfm);
            std::cout << Json{{"views", ds.views.size()}, {"out", gen_out}}.dump() << '\n';
        } else if (tr->parsed()) {
            if (!tr_config.empty()) tc = train_config_from_json(read_json(tr_config));
            if (tr->count("--seed") || app.count("--seed")) tc.seed = opt.seed;
            if (tr_iterations) tc.iterations = *tr_iterations;
            if (tr_points) tc.num_points = *tr_points;
            if (tr_k) tc.model.attention.k = *tr_k;
            if (tr_unet_width) tc.model.unet_base_width = *tr_unet_width;
            if (tr_unet_depth) tc.model.unet_depth = *tr_unet_depth;
            if (lr_points) tc.lr.points = *lr_points;
            if (lr_features) tc.lr.features = *lr_features;
            if (lr_influence) tc.lr.influence = *lr_influence;
            if (lr_mlps) tc.lr.mlps = *lr_mlps;
            if (lr_decoders) tc.lr.decoders = *lr_decoders;
            if (lambda_mse) tc.lambda_mse = *lambda_mse;
            if (lambda_perc) tc.lambda_perc = *lambda_perc;
            if (tr_perceptual) tc.perceptual = *tr_perceptual;
            if (prune_enabled) tc.prune.enabled = *prune_enabled;
            if (prune_threshold) tc.prune.threshold = *prune_threshold;
            if (prune_every) tc.prune.every = *prune_every;
            if (prune_start) tc.prune.start = *prune_start;
            if (tr_ckpt_every) tc.checkpoint_every = *tr_ckpt_every;
            if (tr_ckpt_dir) tc.checkpoint_dir = *tr_ckpt_dir;
            const Dataset ds = load_dataset(tr_data);
            std::ofstream log;
            if (!tr_log.empty()) {
                if (fs::path(tr_log).has_parent_path()) fs::create_directories(fs::path(tr_log).parent_path());
                log.open(tr_log);
                if (!log) throw Error("cannot write " + tr_log);
            }
            TrainHooks hooks;
            hooks.on_log = [&](const LogRecord& r) {
                if (log) log << to_json(r).dump() << '\n';
            };
            if (!tr_joint_data.empty()) {
                if (tr_joint_out.empty()) throw Error("--joint-data needs --joint-out");
                TrainConfig tc_b = tc;
                tc_b.seed = tc.seed + 1;
                if (!tr_joint_config.empty()) tc_b = train_config_from_json(read_json(tr_joint_config));
                const JointResult result = joint_train(ds, tc, load_dataset(tr_joint_data), tc_b, hooks);
                save_checkpoint(result.checkpoints[0], tr_out);
                save_checkpoint(result.checkpoints[1], tr_joint_out);
                std::cout << Json{{"iterations", result.log.back().iteration}, {"bundle", result.bundle.id},
                                  {"out", {tr_out, tr_joint_out}}}.dump()
                          << '\n';
            } else {
                const TrainResult result = train(ds, tc, hooks);
                save_checkpoint(result.checkpoint, tr_out);
                const LogRecord& last = result.log.back();
                std::cout << Json{{"iterations", last.iteration}, {"final_total", last.loss.total}, {"out", tr_out}}.dump()
                          << '\n';
            }
        } else if (rd->parsed()) {
            Checkpoint ck = load_checkpoint(rd_ckpt);
            apply_log(ck, rd_edits);
            const Camera cam = pick_camera(ck, rd_index, rd_camera);
            if (fs::path(rd_out).extension() == ".pfm") {
                const RenderOutput<float> out = render_view(ck.model, cam);
                write_pfm(rd_out, rd_output == "color" ? out.color_linear(ck.log_eps) : out.albedo_linear(ck.log_eps));
            } else {
                const auto png = render_png(ck.model.scene, ck.model.attention.view(), ck.model.decoders.view(), cam,
                                            rd_output, ck.log_eps);
                std::ofstream out(rd_out, std::ios::binary);
                out.write(reinterpret_cast<const char*>(png.data()), std::streamsize(png.size()));
                if (!out) throw Error("cannot write " + rd_out);
            }
        } else if (ed->parsed()) {
            Checkpoint ck = load_checkpoint(ed_ckpt);
            VersionTree tree;
            std::uint64_t v = tree.add_root(ck.model.scene);
            Json ops = read_json(ed_op);
            if (!ops.is_array()) ops = Json::array({ops});
            for (const auto& j : ops) v = tree.edit(v, edit_op_from_json(j));
            ck.model.scene = *tree.get(v)->scene;
            save_checkpoint(ck, ed_out);
            const Json log = tree.log(v);
            if (!ed_log.empty()) write_text(ed_log, log.dump(2) + "\n");
            std::cout << Json{{"version", v}, {"log", log}}.dump() << '\n';
        } else if (ev->parsed()) {
            if (!ev_pred.empty() || !ev_gt.empty()) {
                if (ev_pred.empty() || ev_gt.empty()) throw Error("eval needs both --pred and --gt");
                const auto m = eval::compare_images(read_image(ev_pred).cast<double>(), read_image(ev_gt).cast<double>());
                std::cout << to_json(m).dump() << '\n';
            } else {
                if (ev_ckpt.empty() || ev_data.empty()) throw Error("eval needs --pred/--gt or --checkpoint/--data");
                const Checkpoint ck = load_checkpoint(ev_ckpt);
                const Dataset ds = load_dataset(ev_data);
                if (ev_views.empty())
                    for (int i = 0; i < int(ds.views.size()); ++i) ev_views.push_back(i);
                Json rows = Json::array();
                for (int i : ev_views) {
                    if (i < 0 || i >= int(ds.views.size())) throw Error("view index " + std::to_string(i) + " out of range");
                    const RenderOutput<float> out = render_view(ck.model, ds.views[i].camera);
                    rows.push_back({{"view", i},
                                    {"color", to_json(eval::compare_images(out.color_linear(ds.log_eps).cast<double>(),
                                                                            ds.views[i].color.cast<double>()))},
                                    {"albedo", to_json(eval::compare_images(out.albedo_linear(ds.log_eps).cast<double>(),
                                                                             ds.views[i].albedo.cast<double>()))}});
                }
                std::cout << Json{{"views", rows}}.dump() << '\n';
            }
        } else if (sv->parsed()) {
            std::vector<Checkpoint> cks;
            for (const auto& p : sv_ckpts) cks.push_back(load_checkpoint(p));
            const Service service(std::move(cks));
            const auto [host, port] = parse_bind(sv_bind);
            std::cerr << "serving on " << host << ":" << port << '\n';
            serve(service, host + ":" + std::to_string(port));
        } else if (ex->parsed()) {
            const Checkpoint ck = load_checkpoint(ex_ckpt);
            const Camera cam = pick_camera(ck, ex_index, ex_camera);
            const eval::FeatureTable t = eval::export_features(ck.model, cam);
            std::ostringstream ss;
            eval::write_features_csv(t, ss);
            write_text(ex_out, ss.str());
        }
    } catch (const std::exception& e) {
        if (opt.json) std::cerr << Json{{"error", e.what()}}.dump() << '\n';
        else std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
