#include "ipapr/service.hpp"

#include "ipapr/image_io.hpp"

#include <httplib.h>

#include <cstdlib>
#include <cstring>
#include <regex>

namespace ipapr {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

class BadRequest : public Error {
public:
    BadRequest(int status, const std::string& what, std::string field = {})
        : Error(what), status(status), field(std::move(field)) {}
    int status;
    std::string field;
};

const Json& require(const Json& req, const char* field) {
    if (!req.contains(field)) throw BadRequest(400, std::string("missing field '") + field + "'", field);
    return req[field];
}

std::uint64_t version_field(const Json& req) {
    const Json& v = require(req, "version");
    if (!v.is_number_unsigned()) throw BadRequest(400, "version must be a nonnegative integer", "version");
    return v.get<std::uint64_t>();
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const std::uint32_t n = (std::uint32_t(bytes[i]) << 16) |
                                (i + 1 < bytes.size() ? std::uint32_t(bytes[i + 1]) << 8 : 0) |
                                (i + 2 < bytes.size() ? std::uint32_t(bytes[i + 2]) : 0);
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kAlphabet[n & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=') break;
        const char* p = std::strchr(kAlphabet, ch);
        if (!p || ch == '\0') throw Error("invalid base64 input");
        acc = (acc << 6) | std::uint32_t(p - kAlphabet);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(std::uint8_t((acc >> bits) & 0xff));
        }
    }
    return out;
}

std::vector<std::uint8_t> render_png(const PointScene<float>& scene, const AttentionView<float>& attention,
                                     const DecoderView<float>& decoders, const Camera& camera, const std::string& output,
                                     double log_eps) {
    if (output != "color" && output != "albedo") throw Error("output must be \"color\" or \"albedo\"");
    const RenderOutput<float> out = render_view(scene, attention, decoders, camera);
    return encode_png(output == "color" ? out.color_linear(log_eps) : out.albedo_linear(log_eps));
}

Service::Service(std::vector<Checkpoint> checkpoints) {
    if (checkpoints.empty()) throw Error("service needs at least one checkpoint");
    for (auto& ck : checkpoints) {
        ck.model.scene.validate(ck.model.attention.k);
        hashes_.push_back(hex64(fnv1a(serialize_checkpoint(ck))));
        auto ctx = std::make_unique<Context>();
        ctx->root = tree_.add_root(ck.model.scene);
        ctx->checkpoint = std::move(ck);
        roots_.push_back(ctx->root);
        contexts_.push_back(std::move(ctx));
    }
}

const Service::Context& Service::context_of(std::uint64_t version) const {
    const std::uint64_t root = tree_.root_of(version);
    for (const auto& c : contexts_)
        if (c->root == root) return *c;
    throw Error("version " + std::to_string(version) + " has no checkpoint");
}

Camera Service::camera_from_request(const Json& req, const Context& ctx) const {
    if (req.contains("camera_index")) {
        if (!req["camera_index"].is_number_integer()) throw BadRequest(400, "camera_index must be an integer", "camera_index");
        const int i = req["camera_index"];
        if (i < 0 || i >= int(ctx.checkpoint.cameras.size()))
            throw BadRequest(400, "camera_index " + std::to_string(i) + " out of range", "camera_index");
        return ctx.checkpoint.cameras[i];
    }
    if (req.contains("camera")) {
        try {
            return camera_from_json(req["camera"]);
        } catch (const std::exception& e) {
            throw BadRequest(400, std::string("bad camera: ") + e.what(), "camera");
        }
    }
    throw BadRequest(400, "request needs camera or camera_index", "camera");
}

Service::Response Service::healthz() const {
    return {200, {{"status", "ok"}, {"checkpoint_hash", hashes_.front()}, {"checkpoints", hashes_}}};
}

Service::Response Service::list_versions() const {
    Json out = Json::array();
    for (const auto& v : tree_.versions()) {
        out.push_back({{"id", v->id},
                       {"parent", v->parent ? Json(*v->parent) : Json(nullptr)},
                       {"root", tree_.root_of(v->id)},
                       {"op", v->op ? to_json(*v->op) : Json(nullptr)},
                       {"points", v->scene->size()}});
    }
    return {200, {{"versions", out}}};
}

Service::Response Service::render(const Json& req) const {
    const std::uint64_t id = version_field(req);
    const auto v = tree_.get(id);
    const Context& ctx = context_of(id);
    const Camera cam = camera_from_request(req, ctx);
    const std::string output = req.value("output", std::string("color"));
    if (output != "color" && output != "albedo") throw BadRequest(400, "output must be \"color\" or \"albedo\"", "output");
    const Model<float>& m = ctx.checkpoint.model;
    const auto png = render_png(*v->scene, m.attention.view(), m.decoders.view(), cam, output, ctx.checkpoint.log_eps);
    return {200, {{"version", id}, {"output", output}, {"height", cam.height}, {"width", cam.width},
                  {"png", base64_encode(png)}}};
}

Service::Response Service::pick(const Json& req) const {
    const std::uint64_t id = version_field(req);
    const auto v = tree_.get(id);
    const Context& ctx = context_of(id);
    const Camera cam = camera_from_request(req, ctx);
    const Json& px = require(req, "pixel");
    if (!px.is_array() || px.size() != 2 || !px[0].is_number_integer() || !px[1].is_number_integer())
        throw BadRequest(400, "pixel must be [row, col]", "pixel");
    const int row = px[0], col = px[1];
    if (row < 0 || col < 0 || row >= cam.height || col >= cam.width)
        throw BadRequest(400, "pixel is outside the image", "pixel");
    const Eigen::Index point = pick_point(*v->scene, ctx.checkpoint.model.attention.view(), cam, row, col);
    const Eigen::Vector3d p = v->scene->positions.col(point).cast<double>();
    return {200, {{"version", id}, {"point_id", point}, {"position", vec_to_json(p)}}};
}

Service::Response Service::select(const Json& req) const {
    const std::uint64_t id = version_field(req);
    const auto v = tree_.get(id);
    const Json& center = require(req, "center");
    const Json& radius = require(req, "radius");
    if (!center.is_number_integer()) throw BadRequest(400, "center must be a point id", "center");
    if (!radius.is_number() || !(radius.get<double>() >= 0.0))
        throw BadRequest(400, "radius must be a nonnegative number", "radius");
    const Eigen::Index c = center;
    if (c < 0 || c >= v->scene->size()) throw BadRequest(400, "center id out of range", "center");
    return {200, {{"version", id}, {"ids", select_region(*v->scene, c, radius.get<double>())}}};
}

Service::Response Service::edit(const Json& req) const {
    const std::uint64_t id = version_field(req);
    tree_.get(id);
    EditOp op;
    try {
        op = edit_op_from_json(require(req, "op"));
    } catch (const EditError& e) {
        throw BadRequest(400, e.what(), "op." + e.field());
    }
    std::lock_guard lock(edit_mutex_);
    try {
        const std::uint64_t next = tree_.edit(id, op);
        return {200, {{"version", next}, {"parent", id}}};
    } catch (const EditError& e) {
        throw BadRequest(400, e.what(), "op." + e.field());
    }
}

Service::Response Service::version_log(std::uint64_t id) const {
    return {200, {{"version", id}, {"root", tree_.root_of(id)}, {"log", tree_.log(id)}}};
}

Service::Response Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
    static const std::regex log_path(R"(/version/(\d+)/log)");
    try {
        std::smatch m;
        if (method == "GET" && path == "/healthz") return healthz();
        if (method == "GET" && path == "/versions") return list_versions();
        if (method == "GET" && std::regex_match(path, m, log_path)) return version_log(std::stoull(m[1].str()));
        if (method == "POST") {
            Json req;
            try {
                req = Json::parse(body);
            } catch (const std::exception&) {
                throw BadRequest(400, "request body is not valid JSON");
            }
            if (!req.is_object()) throw BadRequest(400, "request body must be a JSON object");
            if (path == "/render") return render(req);
            if (path == "/pick") return pick(req);
            if (path == "/select") return select(req);
            if (path == "/edit") return edit(req);
        }
        return {404, {{"error", "no route for " + method + " " + path}}};
    } catch (const BadRequest& e) {
        Json b{{"error", e.what()}};
        if (!e.field.empty()) b["field"] = e.field;
        return {e.status, b};
    } catch (const Error& e) {
        const std::string what = e.what();
        const int status = what.rfind("unknown version", 0) == 0 ? 404 : 400;
        return {status, {{"error", what}}};
    }
}

void Service::install(httplib::Server& server) const {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        const Response r = handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/healthz", forward);
    server.Get("/versions", forward);
    server.Get(R"(/version/(\d+)/log)", forward);
    server.Post("/render", forward);
    server.Post("/pick", forward);
    server.Post("/select", forward);
    server.Post("/edit", forward);
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
    std::string b = bind;
    if (b.empty()) {
        const char* env = std::getenv("IPAPR_BIND");
        b = env && *env ? env : "127.0.0.1:8080";
    }
    const auto colon = b.rfind(':');
    if (colon == std::string::npos) throw Error("bind address must be host:port, got '" + b + "'");
    int port = 0;
    try {
        port = std::stoi(b.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error("bad port in bind address '" + b + "'");
    }
    if (port < 0 || port > 65535) throw Error("bad port in bind address '" + b + "'");
    return {b.substr(0, colon), port};
}

void serve(const Service& service, const std::string& bind) {
    const auto [host, port] = parse_bind(bind);
    httplib::Server server;
    service.install(server);
    if (!server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    server.listen_after_bind();
}

}  // namespace ipapr
