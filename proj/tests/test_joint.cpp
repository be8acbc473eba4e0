#include "ipapr/trainer.hpp"
#include "support/scenes.hpp"

#include <doctest.h>

using namespace ipapr;

namespace {

struct Pair {
    Dataset a = synth::generate_scene(fixtures::tiny_orb());
    Dataset b = synth::generate_scene(fixtures::tiny_pair_scene());
};

const Pair& pair_data() {
    static const Pair p;
    return p;
}

template <typename T>
bool same_arrays(T& x, T& y) {
    std::vector<Eigen::VectorXf> flat;
    x.for_each_param("", [&](const std::string&, auto& a) { flat.push_back(Eigen::Map<const Eigen::VectorXf>(a.data(), a.size())); });
    bool same = true;
    std::size_t i = 0;
    y.for_each_param("", [&](const std::string&, auto& a) {
        same = same && flat[i++] == Eigen::Map<const Eigen::VectorXf>(a.data(), a.size());
    });
    return same;
}

}  // namespace

TEST_CASE("joint training alternates scenes and shares exactly the declared parameters") {
    const Pair& d = pair_data();
    TrainConfig ca = fixtures::micro_train_config(8, 1), cb = fixtures::micro_train_config(8, 2, 20);
    JointResult r = joint_train(d.a, ca, d.b, cb);
    REQUIRE(r.log.size() == 8);
    for (std::size_t i = 0; i < r.log.size(); ++i) CHECK(r.log[i].scene == int(i % 2));

    Checkpoint& x = r.checkpoints[0];
    Checkpoint& y = r.checkpoints[1];
    CHECK(same_arrays(x.model.attention.albedo_value, y.model.attention.albedo_value));
    CHECK(same_arrays(x.model.attention.shading_value, y.model.attention.shading_value));
    CHECK(same_arrays(x.model.decoders.albedo, y.model.decoders.albedo));
    CHECK_FALSE(same_arrays(x.model.attention.key, y.model.attention.key));
    CHECK_FALSE(same_arrays(x.model.decoders.color, y.model.decoders.color));
    CHECK(x.model.scene.size() == 16);
    CHECK(y.model.scene.size() == 20);
    CHECK(!x.model.scene.bundle_id.empty());
    CHECK(x.model.scene.bundle_id == y.model.scene.bundle_id);
    CHECK(x.config["joint"]["scene"] == 0);
    CHECK(y.config["joint"]["bundle_id"] == r.bundle.id);
    CHECK(x.iteration == 7);
    CHECK(y.iteration == 8);
}

TEST_CASE("a scene's own parameters only change on its own iterations") {
    const Pair& d = pair_data();
    TrainConfig ca = fixtures::micro_train_config(1, 1), cb = fixtures::micro_train_config(1, 2);
    JointResult one = joint_train(d.a, ca, d.b, cb);
    // after a single (scene A) iteration scene B is still at its initialization
    Model<float> b0 = init_model<float>(cb.model, cb.num_points, d.b.bounds, cb.seed);
    CHECK(one.scenes[1].scene.positions == b0.scene.positions);
    CHECK(one.scenes[1].scene.albedo_features == b0.scene.albedo_features);
    CHECK(same_arrays(one.scenes[1].key, b0.attention.key));
    CHECK(same_arrays(one.scenes[1].color_decoder, b0.decoders.color));
    Model<float> a0 = init_model<float>(ca.model, ca.num_points, d.a.bounds, ca.seed);
    CHECK(one.scenes[0].scene.positions != a0.scene.positions);
    CHECK_FALSE(same_arrays(one.bundle.albedo_decoder, a0.decoders.albedo));
}

TEST_CASE("joint training replays from its log with plain Adam steps") {
    const Pair& d = pair_data();
    TrainConfig ca = fixtures::micro_train_config(6, 3), cb = fixtures::micro_train_config(6, 4);
    JointResult r = joint_train(d.a, ca, d.b, cb);

    // independent replay: one Model per scene, shared arrays copied after every step
    const Dataset* data[2] = {&d.a, &d.b};
    const TrainConfig* cfgs[2] = {&ca, &cb};
    Model<float> m[2];
    for (int s = 0; s < 2; ++s) m[s] = init_model<float>(cfgs[s]->model, cfgs[s]->num_points, data[s]->bounds, cfgs[s]->seed);
    m[1].attention.albedo_value = m[0].attention.albedo_value;
    m[1].attention.shading_value = m[0].attention.shading_value;
    m[1].decoders.albedo = m[0].decoders.albedo;
    const EncodedTargets targets[2] = {encode_targets(d.a), encode_targets(d.b)};
    nn::AdamState<float> shared, own[2];
    for (const LogRecord& rec : r.log) {
        const int s = rec.scene;
        LossTerms terms;
        Model<float> g = loss_gradient(m[s].scene, m[s].attention.view(), m[s].decoders.view(),
                                       data[s]->views[rec.view].camera, targets[s].color[rec.view],
                                       targets[s].albedo[rec.view], LossWeights{}, terms);
        CHECK(terms.total == rec.loss.total);
        std::vector<Eigen::VectorXf> grads;
        g.for_each_param([&](const std::string&, const std::string&, auto& a) {
            grads.push_back(Eigen::Map<const Eigen::VectorXf>(a.data(), a.size()));
        });
        std::vector<nn::ParamEntry<float>> shared_e, own_e;
        std::size_t i = 0;
        m[s].for_each_param([&](const std::string& name, const std::string& group, auto& a) {
            const bool is_shared = name.rfind("attention/albedo_value", 0) == 0 ||
                                   name.rfind("attention/shading_value", 0) == 0 || name.rfind("decoder/albedo", 0) == 0;
            (is_shared ? shared_e : own_e).push_back(nn::make_entry<float>(name, group, a, grads[i++]));
        });
        nn::AdamHyper h;
        const double f = lr_factor(rec.iteration, ca.iterations, ca.lr_final_fraction);
        for (auto [group, lr] : ca.lr.by_group()) h.lr[group] = lr * f;
        nn::adam_step(shared, shared_e, h);
        nn::adam_step(own[s], own_e, h);
        const int o = 1 - s;
        m[o].attention.albedo_value = m[s].attention.albedo_value;
        m[o].attention.shading_value = m[s].attention.shading_value;
        m[o].decoders.albedo = m[s].decoders.albedo;
    }
    for (int s = 0; s < 2; ++s) {
        CHECK(m[s].scene.positions == r.checkpoints[s].model.scene.positions);
        CHECK(m[s].scene.albedo_features == r.checkpoints[s].model.scene.albedo_features);
        CHECK(m[s].scene.influence == r.checkpoints[s].model.scene.influence);
        CHECK(same_arrays(m[s].attention.key, r.checkpoints[s].model.attention.key));
        CHECK(same_arrays(m[s].attention.albedo_value, r.checkpoints[s].model.attention.albedo_value));
        CHECK(same_arrays(m[s].decoders.color, r.checkpoints[s].model.decoders.color));
        CHECK(same_arrays(m[s].decoders.albedo, r.checkpoints[s].model.decoders.albedo));
    }
}

TEST_CASE("joint training needs matching architectures") {
    const Pair& d = pair_data();
    TrainConfig ca = fixtures::micro_train_config(2, 1), cb = fixtures::micro_train_config(2, 2);
    cb.model.attention.albedo_value_dim = 5;
    CHECK_THROWS_AS(joint_train(d.a, ca, d.b, cb), ShapeError);
}
