#include "ipapr/json_io.hpp"

namespace ipapr {

Json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vec_from_json(const Json& j, Eigen::Index expected_size) {
    if (!j.is_array()) throw Error("expected a JSON array of numbers");
    if (expected_size >= 0 && Eigen::Index(j.size()) != expected_size)
        throw Error("expected " + std::to_string(expected_size) + " numbers, got " + std::to_string(j.size()));
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw Error("expected a JSON array of numbers");
        v[Eigen::Index(i)] = j[i].get<double>();
    }
    return v;
}

Json to_json(const Camera& camera) {
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(vec_to_json(camera.rotation.row(r).transpose()));
    return {{"rotation", rot},
            {"translation", vec_to_json(camera.translation)},
            {"focal", camera.focal},
            {"principal", vec_to_json(camera.principal)},
            {"height", camera.height},
            {"width", camera.width}};
}

Camera camera_from_json(const Json& j) {
    if (!j.is_object()) throw Error("camera must be a JSON object");
    Camera cam;
    const Json& rot = j.at("rotation");
    if (!rot.is_array() || rot.size() != 3) throw Error("camera rotation must be 3 rows of 3 numbers");
    for (int r = 0; r < 3; ++r) cam.rotation.row(r) = vec_from_json(rot[r], 3).transpose();
    cam.translation = vec_from_json(j.at("translation"), 3);
    cam.focal = j.at("focal").get<double>();
    cam.principal = vec_from_json(j.at("principal"), 2);
    cam.height = j.at("height").get<int>();
    cam.width = j.at("width").get<int>();
    cam.validate();
    return cam;
}

Json to_json(const Bounds& bounds) {
    return {{"lower", vec_to_json(bounds.lower)}, {"upper", vec_to_json(bounds.upper)}};
}

Bounds bounds_from_json(const Json& j) {
    Bounds b;
    b.lower = vec_from_json(j.at("lower"), 3);
    b.upper = vec_from_json(j.at("upper"), 3);
    if (b.degenerate()) throw Error("bounds are degenerate");
    return b;
}

}  // namespace ipapr
