#include "ipapr/editing.hpp"

#include <cmath>

namespace ipapr {

namespace {

PointIds ids_from(const Json& j, const std::string& field) {
    if (!j.contains(field)) throw EditError(field, "missing");
    const Json& a = j[field];
    if (!a.is_array()) throw EditError(field, "must be an array of point ids");
    PointIds out;
    for (const auto& v : a) {
        if (!v.is_number_integer()) throw EditError(field, "point ids must be integers");
        out.push_back(v.get<Eigen::Index>());
    }
    return out;
}

Eigen::Index id_from(const Json& j, const std::string& field) {
    if (!j.contains(field)) throw EditError(field, "missing");
    if (!j[field].is_number_integer()) throw EditError(field, "must be an integer point id");
    return j[field].get<Eigen::Index>();
}

void check_ids(const PointIds& ids, Eigen::Index n, const std::string& field, bool allow_empty = false) {
    if (ids.empty() && !allow_empty) throw EditError(field, "must not be empty");
    for (Eigen::Index i : ids)
        if (i < 0 || i >= n) throw EditError(field, "point id " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
}

void check_id(Eigen::Index i, Eigen::Index n, const std::string& field) {
    if (i < 0 || i >= n) throw EditError(field, "point id " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
}

}  // namespace

std::string op_type(const EditOp& op) {
    static const char* names[] = {"albedo_transfer", "shading_transfer", "shading_scale", "albedo_blend",
                                  "cross_scene_transfer"};
    return names[op.index()];
}

Json to_json(const EditOp& op) {
    Json j{{"type", op_type(op)}};
    if (const auto* e = std::get_if<AlbedoTransfer>(&op)) {
        j["source"] = e->source;
        j["targets"] = e->targets;
    } else if (const auto* e = std::get_if<ShadingTransfer>(&op)) {
        j["source"] = e->source;
        j["targets"] = e->targets;
    } else if (const auto* e = std::get_if<ShadingScale>(&op)) {
        j["targets"] = e->targets ? Json(*e->targets) : Json("all");
        j["scale"] = e->scale;
    } else if (const auto* e = std::get_if<AlbedoBlend>(&op)) {
        j["sources"] = e->sources;
        j["weights"] = e->weights;
        j["targets"] = e->targets;
    } else if (const auto* e = std::get_if<CrossSceneTransfer>(&op)) {
        j["source_scene"] = e->source_scene;
        j["source_point"] = e->source_point;
        j["target_scene"] = e->target_scene;
        j["targets"] = e->targets;
        j["kind"] = e->kind == FeatureKind::Albedo ? "albedo" : "shading";
    }
    return j;
}

EditOp edit_op_from_json(const Json& j) {
    if (!j.is_object()) throw EditError("op", "must be a JSON object");
    if (!j.contains("type") || !j["type"].is_string()) throw EditError("type", "missing");
    const std::string type = j["type"];
    if (type == "albedo_transfer") return AlbedoTransfer{id_from(j, "source"), ids_from(j, "targets")};
    if (type == "shading_transfer") return ShadingTransfer{id_from(j, "source"), ids_from(j, "targets")};
    if (type == "shading_scale") {
        ShadingScale op;
        if (!j.contains("scale") || !j["scale"].is_number()) throw EditError("scale", "must be a number");
        op.scale = j["scale"];
        if (!j.contains("targets") || j["targets"] == "all") return op;
        op.targets = ids_from(j, "targets");
        return op;
    }
    if (type == "albedo_blend") {
        AlbedoBlend op;
        op.sources = ids_from(j, "sources");
        if (!j.contains("weights") || !j["weights"].is_array()) throw EditError("weights", "must be an array of numbers");
        for (const auto& w : j["weights"]) {
            if (!w.is_number()) throw EditError("weights", "must be an array of numbers");
            op.weights.push_back(w);
        }
        op.targets = ids_from(j, "targets");
        return op;
    }
    if (type == "cross_scene_transfer") {
        CrossSceneTransfer op;
        for (const char* f : {"source_scene", "target_scene"})
            if (!j.contains(f) || !j[f].is_number_unsigned()) throw EditError(f, "must be a nonnegative integer");
        op.source_scene = j["source_scene"];
        op.target_scene = j["target_scene"];
        op.source_point = id_from(j, "source_point");
        op.targets = ids_from(j, "targets");
        const std::string kind = j.value("kind", std::string("albedo"));
        if (kind == "albedo") op.kind = FeatureKind::Albedo;
        else if (kind == "shading") op.kind = FeatureKind::Shading;
        else throw EditError("kind", "must be \"albedo\" or \"shading\"");
        return op;
    }
    throw EditError("type", "unknown edit type '" + type + "'");
}

void validate_edit(const EditOp& op, Eigen::Index n) {
    if (const auto* e = std::get_if<AlbedoTransfer>(&op)) {
        check_id(e->source, n, "source");
        check_ids(e->targets, n, "targets");
    } else if (const auto* e = std::get_if<ShadingTransfer>(&op)) {
        check_id(e->source, n, "source");
        check_ids(e->targets, n, "targets");
    } else if (const auto* e = std::get_if<ShadingScale>(&op)) {
        if (!std::isfinite(e->scale) || e->scale < 0.0) throw EditError("scale", "must be finite and nonnegative");
        if (e->targets) check_ids(*e->targets, n, "targets");
    } else if (const auto* e = std::get_if<AlbedoBlend>(&op)) {
        check_ids(e->sources, n, "sources");
        check_ids(e->targets, n, "targets");
        if (e->weights.size() != e->sources.size()) throw EditError("weights", "need one weight per source");
        double sum = 0.0;
        for (double w : e->weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw EditError("weights", "must be finite and nonnegative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw EditError("weights", "must sum to 1");
    } else if (const auto* e = std::get_if<CrossSceneTransfer>(&op)) {
        check_ids(e->targets, n, "targets");
    }
}

std::uint64_t VersionTree::add_root(PointScene<float> scene) {
    std::lock_guard lock(mutex_);
    auto v = std::make_shared<Version>();
    v->id = next_id_++;
    scene.version_id = v->id;
    v->scene = std::make_shared<const PointScene<float>>(std::move(scene));
    versions_[v->id] = v;
    return v->id;
}

std::uint64_t VersionTree::edit(std::uint64_t parent, const EditOp& op) {
    const auto base = get(parent);
    PointScene<float> next;
    if (const auto* cross = std::get_if<CrossSceneTransfer>(&op)) {
        if (cross->target_scene != parent) throw EditError("target_scene", "must equal the version being edited");
        const auto source = get(cross->source_scene);
        next = apply_cross_scene(*source->scene, *base->scene, *cross);
    } else {
        next = apply_edit(*base->scene, op);
    }
    std::lock_guard lock(mutex_);
    auto v = std::make_shared<Version>();
    v->id = next_id_++;
    v->parent = parent;
    v->op = op;
    next.version_id = v->id;
    v->scene = std::make_shared<const PointScene<float>>(std::move(next));
    versions_[v->id] = v;
    return v->id;
}

std::shared_ptr<const VersionTree::Version> VersionTree::get(std::uint64_t id) const {
    std::lock_guard lock(mutex_);
    auto it = versions_.find(id);
    if (it == versions_.end()) throw Error("unknown version " + std::to_string(id));
    return it->second;
}

std::vector<std::shared_ptr<const VersionTree::Version>> VersionTree::versions() const {
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<const Version>> out;
    for (const auto& [id, v] : versions_) out.push_back(v);
    return out;
}

std::uint64_t VersionTree::root_of(std::uint64_t id) const {
    auto v = get(id);
    while (v->parent) v = get(*v->parent);
    return v->id;
}

Json VersionTree::log(std::uint64_t id) const {
    std::vector<std::shared_ptr<const Version>> chain;
    for (auto v = get(id); v->parent; v = get(*v->parent)) chain.push_back(v);
    Json out = Json::array();
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
        out.push_back({{"version", (*it)->id}, {"parent", *(*it)->parent}, {"op", to_json(*(*it)->op)}});
    return out;
}

PointScene<float> replay_log(const PointScene<float>& root, const Json& log,
                             const std::function<const PointScene<float>&(std::uint64_t)>& source_of) {
    PointScene<float> scene = root;
    for (const auto& entry : log) {
        const EditOp op = edit_op_from_json(entry.at("op"));
        if (const auto* cross = std::get_if<CrossSceneTransfer>(&op)) {
            if (!source_of) throw Error("replay_log: cross-scene entry needs a source lookup");
            scene.version_id = cross->target_scene;
            scene = apply_cross_scene(source_of(cross->source_scene), scene, *cross);
        } else {
            scene = apply_edit(scene, op);
        }
        scene.version_id = entry.at("version").get<std::uint64_t>();
    }
    return scene;
}

}  // namespace ipapr
