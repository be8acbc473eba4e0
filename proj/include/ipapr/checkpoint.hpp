#pragma once

#include "ipapr/json_io.hpp"
#include "ipapr/nn/adam.hpp"
#include "ipapr/render.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ipapr {

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Everything needed to resume training or serve renders.
struct Checkpoint {
    ModelConfig model_config;
    Model<float> model;
    nn::AdamState<float> optimizer;
    std::int64_t iteration = 0;
    Json config = Json::object();  // training configuration snapshot
    std::vector<Camera> cameras;    // training cameras, addressable by index
    double log_eps = kLogEps;
};

/// Layout: 8-byte magic "IPAPRCK1", u64 little-endian header length, JSON header
/// (array table with name, dtype, shape, byte offset; configs; config hash),
/// then the raw little-endian array blob. Writes go to a temporary file that is
/// renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Zero-filled model with the architecture of `cfg` and `num_points` points.
Model<float> empty_model(const ModelConfig& cfg, Eigen::Index num_points);

}  // namespace ipapr
