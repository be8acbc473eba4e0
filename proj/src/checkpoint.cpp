#include "ipapr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace ipapr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'I', 'P', 'A', 'P', 'R', 'C', 'K', '1'};

const char* activation_name(nn::Activation a) { return a == nn::Activation::ReLU ? "relu" : "leaky_relu"; }

nn::Activation activation_from(const std::string& s) {
    if (s == "relu") return nn::Activation::ReLU;
    if (s == "leaky_relu") return nn::Activation::LeakyReLU;
    throw Error("unknown activation '" + s + "'");
}

struct ArrayRecord {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    const float* data = nullptr;
};

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Json to_json(const ModelConfig& cfg) {
    const AttentionConfig& a = cfg.attention;
    return {{"k", a.k},
            {"key_dim", a.key_dim},
            {"albedo_value_dim", a.albedo_value_dim},
            {"shading_value_dim", a.shading_value_dim},
            {"mlp_hidden", a.hidden},
            {"activation", activation_name(a.activation)},
            {"unet_depth", cfg.unet_depth},
            {"unet_base_width", cfg.unet_base_width},
            {"albedo_feature_dim", cfg.albedo_feature_dim},
            {"shading_feature_dim", cfg.shading_feature_dim}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig cfg;
    AttentionConfig& a = cfg.attention;
    a.k = j.value("k", a.k);
    a.key_dim = j.value("key_dim", a.key_dim);
    a.albedo_value_dim = j.value("albedo_value_dim", a.albedo_value_dim);
    a.shading_value_dim = j.value("shading_value_dim", a.shading_value_dim);
    if (j.contains("mlp_hidden")) a.hidden = j["mlp_hidden"].get<std::vector<int>>();
    a.activation = activation_from(j.value("activation", std::string("leaky_relu")));
    cfg.unet_depth = j.value("unet_depth", cfg.unet_depth);
    cfg.unet_base_width = j.value("unet_base_width", cfg.unet_base_width);
    cfg.albedo_feature_dim = j.value("albedo_feature_dim", cfg.albedo_feature_dim);
    cfg.shading_feature_dim = j.value("shading_feature_dim", cfg.shading_feature_dim);
    return cfg;
}

Model<float> empty_model(const ModelConfig& cfg, Eigen::Index num_points) {
    Model<float> m;
    m.scene.positions = Matrix<float>::Zero(3, num_points);
    m.scene.albedo_features = Matrix<float>::Zero(cfg.albedo_feature_dim, num_points);
    m.scene.shading_features = Matrix<float>::Zero(cfg.shading_feature_dim, num_points);
    m.scene.influence = Vector<float>::Zero(num_points);
    std::mt19937_64 rng(0);
    m.attention = init_attention<float>(cfg.attention, cfg.albedo_feature_dim, cfg.shading_feature_dim, rng)
                      .zeros_like();
    m.decoders = make_decoders<float>(cfg, rng).zeros_like();
    return m;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    Checkpoint& c = const_cast<Checkpoint&>(ckpt);  // for_each_param is non-const; nothing is modified
    std::vector<ArrayRecord> arrays;
    c.model.for_each_param([&](const std::string& name, const std::string&, auto& a) {
        arrays.push_back({name, a.rows(), a.cols(), a.data()});
    });
    for (const auto& [name, mom] : c.optimizer.moments) {
        arrays.push_back({"adam/first/" + name, mom.first.rows(), 1, mom.first.data()});
        arrays.push_back({"adam/second/" + name, mom.second.rows(), 1, mom.second.data()});
    }

    Json table = Json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        const std::uint64_t bytes = std::uint64_t(a.rows * a.cols) * sizeof(float);
        table.push_back({{"name", a.name}, {"dtype", "f32"}, {"shape", {a.rows, a.cols}}, {"offset", offset},
                         {"bytes", bytes}});
        offset += bytes;
    }
    Json cameras = Json::array();
    for (const auto& cam : ckpt.cameras) cameras.push_back(to_json(cam));
    const PointScene<float>& s = ckpt.model.scene;
    Json header{{"format", "IPAPRCK1"},
                {"model_config", to_json(ckpt.model_config)},
                {"config", ckpt.config},
                {"config_hash", hex64(fnv1a(ckpt.config.dump()))},
                {"iteration", ckpt.iteration},
                {"optimizer_step", ckpt.optimizer.step},
                {"log_eps", ckpt.log_eps},
                {"cameras", cameras},
                {"scene", {{"bounds", to_json(s.bounds)}, {"version_id", s.version_id}, {"bundle_id", s.bundle_id}}},
                {"arrays", table}};
    const std::string head = header.dump();

    std::string out(kMagic, sizeof kMagic);
    std::uint64_t len = head.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += head;
    for (const auto& a : arrays) out.append(reinterpret_cast<const char*>(a.data), std::size_t(a.rows * a.cols) * sizeof(float));
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw Error("not a checkpoint (bad magic)");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    if (len > bytes.size() - 16) throw Error("checkpoint header is truncated");
    Json header;
    try {
        header = Json::parse(bytes.substr(16, len));
    } catch (const std::exception& e) {
        throw Error(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const std::string_view blob = bytes.substr(16 + len);

    std::map<std::string, Json> table;
    for (const auto& e : header.at("arrays")) {
        if (e.at("dtype") != "f32") throw Error("unsupported dtype in checkpoint: " + e.at("dtype").dump());
        const std::uint64_t off = e.at("offset"), n = e.at("bytes");
        if (off > blob.size() || n > blob.size() - off) throw Error("checkpoint array '" + e.at("name").get<std::string>() + "' is truncated");
        table[e.at("name")] = e;
    }
    auto fill = [&](const std::string& name, auto& a) {
        auto it = table.find(name);
        if (it == table.end()) throw Error("checkpoint is missing array '" + name + "'");
        const Json& e = it->second;
        const Eigen::Index rows = e["shape"][0], cols = e["shape"][1];
        if (rows != a.rows() || cols != a.cols())
            throw ShapeError("checkpoint array '" + name + "' has shape " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", expected " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()));
        std::memcpy(a.data(), blob.data() + e["offset"].get<std::uint64_t>(), std::size_t(rows * cols) * sizeof(float));
    };

    Checkpoint c;
    c.model_config = model_config_from_json(header.at("model_config"));
    const auto pos = table.find("scene/positions");
    if (pos == table.end()) throw Error("checkpoint is missing array 'scene/positions'");
    c.model = empty_model(c.model_config, pos->second["shape"][1].get<Eigen::Index>());
    c.model.for_each_param([&](const std::string& name, const std::string&, auto& a) { fill(name, a); });
    const Json& sc = header.at("scene");
    c.model.scene.bounds = bounds_from_json(sc.at("bounds"));
    c.model.scene.version_id = sc.at("version_id");
    c.model.scene.bundle_id = sc.at("bundle_id");

    c.optimizer.step = header.at("optimizer_step");
    for (const auto& [name, e] : table) {
        if (name.rfind("adam/first/", 0) != 0) continue;
        const std::string param = name.substr(11);
        auto& mom = c.optimizer.moments[param];
        const Eigen::Index rows = e["shape"][0];
        mom.first.resize(rows);
        mom.second.resize(rows);
        fill(name, mom.first);
        fill("adam/second/" + param, mom.second);
    }
    c.iteration = header.at("iteration");
    c.config = header.at("config");
    c.log_eps = header.at("log_eps");
    for (const auto& cam : header.at("cameras")) c.cameras.push_back(camera_from_json(cam));
    if (header.at("config_hash") != hex64(fnv1a(c.config.dump()))) throw Error("checkpoint config hash mismatch");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace ipapr
