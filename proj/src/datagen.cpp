#include "ipapr/datagen.hpp"

#include "ipapr/image_io.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ipapr::synth {

namespace {

Json texture_to_json(const Texture& t) {
    switch (t.kind) {
        case Texture::Kind::Solid:
            return {{"kind", "solid"}, {"color", vec_to_json(t.color_a)}};
        case Texture::Kind::Checker:
            return {{"kind", "checker"}, {"color_a", vec_to_json(t.color_a)}, {"color_b", vec_to_json(t.color_b)},
                    {"scale", t.scale}};
        case Texture::Kind::Image:
            return {{"kind", "image"}, {"path", t.image_path}};
    }
    return {};
}

Texture texture_from_json(const Json& j, const std::filesystem::path& base_dir) {
    Texture t;
    const std::string kind = j.at("kind");
    if (kind == "solid") {
        t.kind = Texture::Kind::Solid;
        t.color_a = vec_from_json(j.at("color"), 3);
    } else if (kind == "checker") {
        t.kind = Texture::Kind::Checker;
        t.color_a = vec_from_json(j.at("color_a"), 3);
        t.color_b = vec_from_json(j.at("color_b"), 3);
        t.scale = j.at("scale");
    } else if (kind == "image") {
        t.kind = Texture::Kind::Image;
        t.image_path = j.at("path");
        std::filesystem::path p = t.image_path;
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        t.image = read_image(p);
    } else {
        throw Error("unknown texture kind '" + kind + "'");
    }
    return t;
}

void check_texture(const Texture& t, const std::string& owner) {
    auto in_unit = [](const Eigen::Vector3d& c) { return (c.array() >= 0.0).all() && (c.array() <= 1.0).all(); };
    if (!in_unit(t.color_a) || !in_unit(t.color_b)) throw Error(owner + ": albedo colors must lie in [0, 1]");
    if (t.kind == Texture::Kind::Checker && !(t.scale > 0.0)) throw Error(owner + ": checker scale must be positive");
    if (t.kind == Texture::Kind::Image) {
        if (t.image.pixels() == 0) throw Error(owner + ": image texture not loaded");
        if (t.image.data.minCoeff() < 0.0f || t.image.data.maxCoeff() > 1.0f)
            throw Error(owner + ": image texture values must lie in [0, 1]");
    }
}

Eigen::Vector3d sample_image(const Image<float>& img, double u, double v) {
    u -= std::floor(u);
    v = std::clamp(v, 0.0, 1.0);
    const int c = std::min(img.width - 1, int(u * img.width));
    const int r = std::min(img.height - 1, int(v * img.height));
    Eigen::Vector3d out;
    for (int k = 0; k < 3; ++k) out[k] = img.at(r, c, std::min(k, img.channels() - 1));
    return out;
}

Eigen::Vector3d lookup(const Texture& t, const Eigen::Vector3d& p, const Eigen::Vector2d& uv) {
    switch (t.kind) {
        case Texture::Kind::Solid:
            return t.color_a;
        case Texture::Kind::Checker: {
            const long long s = static_cast<long long>(std::floor(p.x() / t.scale)) +
                                static_cast<long long>(std::floor(p.y() / t.scale)) +
                                static_cast<long long>(std::floor(p.z() / t.scale));
            return (s & 1) ? t.color_b : t.color_a;
        }
        case Texture::Kind::Image:
            return sample_image(t.image, uv.x(), uv.y());
    }
    return t.color_a;
}

}  // namespace

void SceneSpec::validate() const {
    if (spheres.empty() && boxes.empty()) throw Error("scene spec has no primitives");
    if (lights.empty() || lights.size() > 4) throw Error("scene spec needs between 1 and 4 lights");
    if (!(ambient >= 0.0)) throw Error("ambient term must be nonnegative");
    if (height < 1 || width < 1) throw Error("resolution must be at least 1x1");
    if (ring.count < 1 || !(ring.radius > 0.0)) throw Error("camera ring needs a positive count and radius");
    if (!(ring.fov_degrees > 0.0 && ring.fov_degrees < 180.0)) throw Error("camera field of view must be in (0, 180)");
    if (!(ring.jitter >= 0.0 && ring.jitter < 1.0)) throw Error("ring jitter must be in [0, 1)");
    if (bounds.degenerate()) throw Error("scene bounds are degenerate");
    const double tol = 1e-9;
    for (std::size_t i = 0; i < spheres.size(); ++i) {
        const Sphere& s = spheres[i];
        const std::string name = "sphere " + std::to_string(i);
        if (!(s.radius > 0.0)) throw Error(name + ": radius must be positive");
        if (((s.center.array() - s.radius) < bounds.lower.array() - tol).any() ||
            ((s.center.array() + s.radius) > bounds.upper.array() + tol).any())
            throw Error(name + " lies outside the scene bounds");
        check_texture(s.texture, name);
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Box& b = boxes[i];
        const std::string name = "box " + std::to_string(i);
        if (!((b.upper - b.lower).array() > 0.0).all()) throw Error(name + ": upper must exceed lower");
        if ((b.lower.array() < bounds.lower.array() - tol).any() || (b.upper.array() > bounds.upper.array() + tol).any())
            throw Error(name + " lies outside the scene bounds");
        check_texture(b.texture, name);
    }
    for (const Light& l : lights)
        if (!(l.intensity >= 0.0) || !l.position.allFinite()) throw Error("light intensity must be nonnegative");
}

Json to_json(const SceneSpec& spec) {
    Json spheres = Json::array(), boxes = Json::array(), lights = Json::array();
    for (const auto& s : spec.spheres)
        spheres.push_back({{"center", vec_to_json(s.center)}, {"radius", s.radius}, {"texture", texture_to_json(s.texture)}});
    for (const auto& b : spec.boxes)
        boxes.push_back({{"lower", vec_to_json(b.lower)}, {"upper", vec_to_json(b.upper)}, {"texture", texture_to_json(b.texture)}});
    for (const auto& l : spec.lights) lights.push_back({{"position", vec_to_json(l.position)}, {"intensity", l.intensity}});
    return {{"name", spec.name},
            {"spheres", spheres},
            {"boxes", boxes},
            {"lights", lights},
            {"ambient", spec.ambient},
            {"shadows", spec.shadows},
            {"ring",
             {{"count", spec.ring.count},
              {"radius", spec.ring.radius},
              {"elevation", spec.ring.elevation},
              {"target", vec_to_json(spec.ring.target)},
              {"fov_degrees", spec.ring.fov_degrees},
              {"jitter", spec.ring.jitter}}},
            {"height", spec.height},
            {"width", spec.width},
            {"seed", spec.seed},
            {"bounds", ipapr::to_json(spec.bounds)}};
}

SceneSpec scene_spec_from_json(const Json& j, const std::filesystem::path& base_dir) {
    SceneSpec spec;
    spec.name = j.value("name", std::string("custom"));
    for (const auto& e : j.value("spheres", Json::array())) {
        Sphere s;
        s.center = vec_from_json(e.at("center"), 3);
        s.radius = e.at("radius");
        s.texture = texture_from_json(e.at("texture"), base_dir);
        spec.spheres.push_back(std::move(s));
    }
    for (const auto& e : j.value("boxes", Json::array())) {
        Box b;
        b.lower = vec_from_json(e.at("lower"), 3);
        b.upper = vec_from_json(e.at("upper"), 3);
        b.texture = texture_from_json(e.at("texture"), base_dir);
        spec.boxes.push_back(std::move(b));
    }
    for (const auto& e : j.at("lights")) spec.lights.push_back({vec_from_json(e.at("position"), 3), e.at("intensity")});
    spec.ambient = j.value("ambient", spec.ambient);
    spec.shadows = j.value("shadows", false);
    if (j.contains("ring")) {
        const Json& r = j["ring"];
        spec.ring.count = r.value("count", spec.ring.count);
        spec.ring.radius = r.value("radius", spec.ring.radius);
        spec.ring.elevation = r.value("elevation", spec.ring.elevation);
        if (r.contains("target")) spec.ring.target = vec_from_json(r["target"], 3);
        spec.ring.fov_degrees = r.value("fov_degrees", spec.ring.fov_degrees);
        spec.ring.jitter = r.value("jitter", spec.ring.jitter);
    }
    spec.height = j.value("height", spec.height);
    spec.width = j.value("width", spec.width);
    spec.seed = j.value("seed", spec.seed);
    spec.bounds = bounds_from_json(j.at("bounds"));
    spec.validate();
    return spec;
}

SceneSpec checker_orb() {
    SceneSpec spec;
    spec.name = "checker-orb";
    Box ground;
    ground.lower = Eigen::Vector3d(-1.5, -0.6, -1.5);
    ground.upper = Eigen::Vector3d(1.5, -0.5, 1.5);
    ground.texture.kind = Texture::Kind::Checker;
    ground.texture.color_a = Eigen::Vector3d(0.85, 0.85, 0.8);
    ground.texture.color_b = Eigen::Vector3d(0.2, 0.3, 0.6);
    ground.texture.scale = 0.5;
    spec.boxes.push_back(ground);

    Sphere orb;
    orb.center = Eigen::Vector3d(-0.45, -0.05, 0.1);
    orb.radius = 0.45;
    orb.texture.kind = Texture::Kind::Checker;
    orb.texture.color_a = Eigen::Vector3d(0.9, 0.3, 0.2);
    orb.texture.color_b = Eigen::Vector3d(0.95, 0.85, 0.3);
    orb.texture.scale = 0.2;
    spec.spheres.push_back(orb);

    Sphere ball;
    ball.center = Eigen::Vector3d(0.55, -0.2, -0.25);
    ball.radius = 0.3;
    ball.texture.kind = Texture::Kind::Solid;
    ball.texture.color_a = Eigen::Vector3d(0.3, 0.75, 0.35);
    spec.spheres.push_back(ball);

    spec.lights.push_back({Eigen::Vector3d(2.0, 3.0, 2.0), 8.0});
    spec.lights.push_back({Eigen::Vector3d(-2.5, 2.0, -1.0), 4.0});
    spec.ambient = 0.1;
    spec.ring.count = 24;
    spec.ring.radius = 3.2;
    spec.ring.elevation = 1.6;
    spec.ring.target = Eigen::Vector3d(0.0, -0.2, 0.0);
    spec.ring.fov_degrees = 40.0;
    spec.height = 64;
    spec.width = 64;
    spec.bounds.lower = Eigen::Vector3d(-1.5, -0.6, -1.5);
    spec.bounds.upper = Eigen::Vector3d(1.5, 0.4, 1.5);
    return spec;
}

std::optional<Hit> intersect_sphere(const Sphere& s, const Ray<double>& ray, double t_min) {
    const Eigen::Vector3d oc = ray.origin - s.center;
    const double b = oc.dot(ray.direction);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= t_min) t = -b + sq;
    if (t <= t_min) return std::nullopt;
    Hit h;
    h.t = t;
    h.point = ray.origin + t * ray.direction;
    h.normal = (h.point - s.center) / s.radius;
    return h;
}

std::optional<Hit> intersect_box(const Box& b, const Ray<double>& ray, double t_min) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis0 = -1, axis1 = -1;
    for (int k = 0; k < 3; ++k) {
        const double d = ray.direction[k];
        if (d == 0.0) {
            if (ray.origin[k] < b.lower[k] || ray.origin[k] > b.upper[k]) return std::nullopt;
            continue;
        }
        double ta = (b.lower[k] - ray.origin[k]) / d, tb = (b.upper[k] - ray.origin[k]) / d;
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) t0 = ta, axis0 = k;
        if (tb < t1) t1 = tb, axis1 = k;
    }
    if (t0 > t1) return std::nullopt;
    double t = t0;
    int axis = axis0;
    if (t <= t_min) t = t1, axis = axis1;
    if (t <= t_min || axis < 0) return std::nullopt;
    Hit h;
    h.t = t;
    h.point = ray.origin + t * ray.direction;
    // on the face plane exactly, so textures aligned with faces do not flicker between views
    h.point[axis] = ray.direction[axis] > 0.0 ? (t == t0 ? b.lower[axis] : b.upper[axis])
                                              : (t == t0 ? b.upper[axis] : b.lower[axis]);
    h.normal = Eigen::Vector3d::Zero();
    h.normal[axis] = ray.direction[axis] > 0.0 ? -1.0 : 1.0;
    return h;
}

std::optional<Hit> trace(const SceneSpec& spec, const Ray<double>& ray, double t_min) {
    std::optional<Hit> best;
    const int ns = int(spec.spheres.size());
    for (int i = 0; i < ns; ++i) {
        auto h = intersect_sphere(spec.spheres[i], ray, t_min);
        if (h && (!best || h->t < best->t)) best = h, best->primitive = i;
    }
    for (int i = 0; i < int(spec.boxes.size()); ++i) {
        auto h = intersect_box(spec.boxes[i], ray, t_min);
        if (h && (!best || h->t < best->t)) best = h, best->primitive = ns + i;
    }
    return best;
}

Eigen::Vector3d albedo_at(const SceneSpec& spec, const Hit& hit) {
    const int ns = int(spec.spheres.size());
    if (hit.primitive < ns) {
        const Eigen::Vector3d& n = hit.normal;
        const Eigen::Vector2d uv(0.5 + std::atan2(n.z(), n.x()) / (2.0 * std::numbers::pi),
                                 std::acos(std::clamp(n.y(), -1.0, 1.0)) / std::numbers::pi);
        return lookup(spec.spheres[hit.primitive].texture, hit.point, uv);
    }
    const Box& b = spec.boxes[hit.primitive - ns];
    int axis = 0;
    hit.normal.cwiseAbs().maxCoeff(&axis);
    const int u_axis = axis == 0 ? 2 : 0, v_axis = axis == 1 ? 2 : 1;
    const Eigen::Vector3d rel = (hit.point - b.lower).cwiseQuotient(b.upper - b.lower);
    return lookup(b.texture, hit.point, Eigen::Vector2d(rel[u_axis], rel[v_axis]));
}

double shade_lambertian(const Eigen::Vector3d& normal, const Eigen::Vector3d& point, const std::vector<Light>& lights,
                        double ambient, const std::vector<bool>& occluded) {
    double s = ambient;
    for (std::size_t l = 0; l < lights.size(); ++l) {
        if (l < occluded.size() && occluded[l]) continue;
        const Eigen::Vector3d to_light = lights[l].position - point;
        const double dist2 = to_light.squaredNorm();
        const double cosine = normal.dot(to_light) / std::sqrt(dist2);
        s += lights[l].intensity * std::max(0.0, cosine) / dist2;
    }
    return std::clamp(s, 0.0, 1.0);
}

double shading_at(const SceneSpec& spec, const Hit& hit) {
    std::vector<bool> occluded;
    if (spec.shadows) {
        const Eigen::Vector3d origin = hit.point + 1e-6 * hit.normal;
        for (const Light& l : spec.lights) {
            const Eigen::Vector3d to_light = l.position - origin;
            const double dist = to_light.norm();
            const auto blocker = trace(spec, {origin, to_light / dist});
            occluded.push_back(blocker && blocker->t < dist);
        }
    }
    return shade_lambertian(hit.normal, hit.point, spec.lights, spec.ambient, occluded);
}

IntrinsicImages render_intrinsics(const SceneSpec& spec, const Camera& camera) {
    IntrinsicImages out{Image<double>(camera.height, camera.width, 3), Image<double>(camera.height, camera.width, 3),
                        Image<double>(camera.height, camera.width, 3),
                        Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(Eigen::Index(camera.height) * camera.width, false)};
    for (int r = 0; r < camera.height; ++r) {
        for (int c = 0; c < camera.width; ++c) {
            const auto hit = trace(spec, pixel_ray(camera, r, c));
            if (!hit) continue;
            const Eigen::Index j = out.color.index(r, c);
            const Eigen::Vector3d a = albedo_at(spec, *hit);
            const double s = shading_at(spec, *hit);
            out.hit[j] = true;
            out.albedo.data.col(j) = a;
            out.shading.data.col(j).setConstant(s);
            out.color.data.col(j) = a * s;
        }
    }
    return out;
}

std::vector<Camera> ring_cameras(const SceneSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const double focal = 0.5 * spec.width / std::tan(0.5 * spec.ring.fov_degrees * std::numbers::pi / 180.0);
    std::vector<Camera> cams;
    for (int i = 0; i < spec.ring.count; ++i) {
        const double step = 2.0 * std::numbers::pi / spec.ring.count;
        const double angle = step * (i + spec.ring.jitter * u(rng));
        const Eigen::Vector3d eye = spec.ring.target + Eigen::Vector3d(spec.ring.radius * std::cos(angle),
                                                                       spec.ring.elevation,
                                                                       spec.ring.radius * std::sin(angle));
        cams.push_back(Camera::look_at(eye, spec.ring.target, focal, spec.height, spec.width));
    }
    return cams;
}

Dataset generate_scene(const SceneSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.bounds = spec.bounds;
    ds.scene = to_json(spec);
    for (const Camera& cam : ring_cameras(spec)) {
        const IntrinsicImages img = render_intrinsics(spec, cam);
        ViewRecord v;
        v.camera = cam;
        v.albedo = img.albedo.cast<float>();
        v.shading = img.shading.cast<float>();
        v.color.height = cam.height;
        v.color.width = cam.width;
        v.color.data = (v.albedo.data.cast<double>().array() * v.shading->data.cast<double>().array()).cast<float>();
        ds.views.push_back(std::move(v));
    }
    return ds;
}

}  // namespace ipapr::synth
