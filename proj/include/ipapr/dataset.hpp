#pragma once

#include "ipapr/camera.hpp"
#include "ipapr/core.hpp"
#include "ipapr/json_io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ipapr {

/// One training view. Images are linear intensities in [0, 1], three channels.
struct ViewRecord {
    Camera camera;
    Image<float> color;
    Image<float> albedo;
    std::optional<Image<float>> shading;
};

struct Dataset {
    std::vector<ViewRecord> views;
    Bounds bounds;
    double log_eps = 1e-3;
    Json scene;  // synthetic scene description when the data came from datagen, else null

    std::vector<Camera> cameras() const;
};

/// Raised for any dataset problem; `view()` is -1 for manifest-level errors.
class DatasetError : public Error {
public:
    DatasetError(int view, const std::string& what);
    int view() const { return view_; }

private:
    int view_;
};

enum class ImageFormat { Pfm, Png };

/// Checks every view invariant. `color_quantised` / `albedo_quantised` widen the
/// I = A * S tolerance by half an 8-bit step for images that went through PNG.
void validate_view(const ViewRecord& view, int index, bool color_quantised = false, bool albedo_quantised = false);

/// Reads `<dir>/manifest.json` and every referenced image.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes images as `view###_{color,albedo,shading}` plus the manifest.
/// Shading is always stored as float.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, ImageFormat format = ImageFormat::Pfm);

}  // namespace ipapr
