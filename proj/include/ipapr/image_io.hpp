#pragma once

#include "ipapr/core.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ipapr {

/// 8-bit PNG, RGB or grayscale on read, RGB on write. Values are linear
/// intensities quantised as round(255 * clamp(x, 0, 1)).
Image<float> read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image<float>& image);
std::vector<std::uint8_t> encode_png(const Image<float>& image);
Image<float> decode_png(const std::vector<std::uint8_t>& bytes);

/// Portable float map, little-endian, 1 or 3 channels, stored bottom row first
/// as the format requires.
Image<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image<float>& image);

/// Dispatches on extension: .png or .pfm.
Image<float> read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image<float>& image);

}  // namespace ipapr
