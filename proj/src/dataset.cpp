#include "ipapr/dataset.hpp"

#include "ipapr/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace ipapr {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormatTag = "ipapr-dataset/1";
constexpr double kIdentityTol = 1e-6;
constexpr double kHalfStep = 0.5 / 255.0;

std::string view_name(int i, const char* kind, ImageFormat fmt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "view%03d_%s.%s", i, kind, fmt == ImageFormat::Png ? "png" : "pfm");
    return buf;
}

void check_image(const Image<float>& img, const Camera& cam, int index, const char* what) {
    if (img.height != cam.height || img.width != cam.width)
        throw DatasetError(index, std::string(what) + " image is " + std::to_string(img.height) + "x" +
                                      std::to_string(img.width) + " but the camera is " + std::to_string(cam.height) +
                                      "x" + std::to_string(cam.width));
    if (img.channels() != 3) throw DatasetError(index, std::string(what) + " image must have 3 channels");
    if (!img.data.allFinite()) throw DatasetError(index, std::string(what) + " image has non-finite values");
    if (img.data.size() > 0 && (img.data.minCoeff() < 0.0f || img.data.maxCoeff() > 1.0f))
        throw DatasetError(index, std::string(what) + " image has values outside [0, 1]");
}

Image<float> load_view_image(const fs::path& dir, const Json& entry, const char* key, int index) {
    if (!entry.contains(key) || !entry[key].is_string()) throw DatasetError(index, std::string("missing ") + key + " image");
    const fs::path path = dir / entry[key].get<std::string>();
    if (!fs::exists(path)) throw DatasetError(index, std::string(key) + " image not found: " + path.string());
    try {
        return read_image(path);
    } catch (const std::exception& e) {
        throw DatasetError(index, std::string("cannot read ") + key + " image: " + e.what());
    }
}

bool is_png(const Json& entry, const char* key) {
    return fs::path(entry[key].get<std::string>()).extension() == ".png";
}

}  // namespace

DatasetError::DatasetError(int view, const std::string& what)
    : Error(view >= 0 ? "view " + std::to_string(view) + ": " + what : "dataset: " + what), view_(view) {}

std::vector<Camera> Dataset::cameras() const {
    std::vector<Camera> out;
    for (const auto& v : views) out.push_back(v.camera);
    return out;
}

void validate_view(const ViewRecord& view, int index, bool color_quantised, bool albedo_quantised) {
    try {
        view.camera.validate();
    } catch (const Error& e) {
        throw DatasetError(index, e.what());
    }
    check_image(view.color, view.camera, index, "color");
    check_image(view.albedo, view.camera, index, "albedo");
    if (!view.shading) return;
    check_image(*view.shading, view.camera, index, "shading");
    const double tol = kIdentityTol + (color_quantised ? kHalfStep : 0.0) + (albedo_quantised ? kHalfStep : 0.0);
    const auto& s = view.shading->data;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        for (int c = 0; c < 3; ++c) {
            const double product = double(view.albedo.data(c, j)) * double(s(c, j));
            if (std::abs(double(view.color.data(c, j)) - product) > tol)
                throw DatasetError(index, "color != albedo * shading at pixel " + std::to_string(j) + " channel " +
                                              std::to_string(c));
        }
    }
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw DatasetError(-1, "cannot open " + manifest_path.string());
    Json m;
    try {
        m = Json::parse(in);
    } catch (const std::exception& e) {
        throw DatasetError(-1, std::string("malformed manifest: ") + e.what());
    }
    if (!m.is_object() || m.value("format", "") != kFormatTag)
        throw DatasetError(-1, std::string("malformed manifest: format must be \"") + kFormatTag + "\"");
    if (m.value("intensity", "linear") != "linear") throw DatasetError(-1, "only linear intensities are supported");
    if (!m.contains("views") || !m["views"].is_array() || m["views"].empty())
        throw DatasetError(-1, "malformed manifest: views must be a nonempty array");

    Dataset ds;
    try {
        ds.bounds = bounds_from_json(m.at("bounds"));
    } catch (const std::exception& e) {
        throw DatasetError(-1, std::string("malformed manifest bounds: ") + e.what());
    }
    ds.log_eps = m.value("log_eps", 1e-3);
    if (m.contains("scene")) ds.scene = m["scene"];

    const Json& views = m["views"];
    for (std::size_t i = 0; i < views.size(); ++i) {
        const int index = int(i);
        const Json& e = views[i];
        ViewRecord v;
        try {
            v.camera = camera_from_json(e.at("camera"));
        } catch (const std::exception& ex) {
            throw DatasetError(index, std::string("bad camera: ") + ex.what());
        }
        v.color = load_view_image(dir, e, "color", index);
        v.albedo = load_view_image(dir, e, "albedo", index);
        if (e.contains("shading") && !e["shading"].is_null()) v.shading = load_view_image(dir, e, "shading", index);
        validate_view(v, index, is_png(e, "color"), is_png(e, "albedo"));
        ds.views.push_back(std::move(v));
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir, ImageFormat format) {
    fs::create_directories(dir);
    Json views = Json::array();
    for (std::size_t i = 0; i < dataset.views.size(); ++i) {
        const ViewRecord& v = dataset.views[i];
        const int index = int(i);
        validate_view(v, index);
        Json e{{"camera", to_json(v.camera)},
               {"color", view_name(index, "color", format)},
               {"albedo", view_name(index, "albedo", format)}};
        write_image(dir / e["color"].get<std::string>(), v.color);
        write_image(dir / e["albedo"].get<std::string>(), v.albedo);
        if (v.shading) {
            e["shading"] = view_name(index, "shading", ImageFormat::Pfm);
            write_image(dir / e["shading"].get<std::string>(), *v.shading);
        }
        views.push_back(std::move(e));
    }
    Json m{{"format", kFormatTag},
           {"intensity", "linear"},
           {"log_eps", dataset.log_eps},
           {"bounds", to_json(dataset.bounds)},
           {"views", views}};
    if (!dataset.scene.is_null()) m["scene"] = dataset.scene;
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << '\n';
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
}

}  // namespace ipapr
