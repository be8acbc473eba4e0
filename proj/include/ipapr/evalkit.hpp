#pragma once

#include "ipapr/datagen.hpp"
#include "ipapr/editing.hpp"
#include "ipapr/render.hpp"

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <vector>

namespace ipapr::eval {

/// 10 log10(1 / MSE) for images in [0, 1]; +infinity when MSE is 0.
double psnr(const Image<double>& pred, const Image<double>& gt);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// data range 1, over the valid region, averaged over channels. Images smaller
/// than the window use the largest odd window that fits.
double ssim(const Image<double>& pred, const Image<double>& gt);

/// Pluggable perceptual metric slot (e.g. LPIPS); absent by default.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual double distance(const Image<double>& pred, const Image<double>& gt) const = 0;
};

struct ImageMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> perceptual;
};
ImageMetrics compare_images(const Image<double>& pred, const Image<double>& gt, const PerceptualMetric* perc = nullptr);
Json to_json(const ImageMetrics& m);

/// Luma 0.299 R + 0.587 G + 0.114 B.
Image<double> luma(const Image<double>& rgb);
/// 3x3 Sobel gradient magnitude of a single-channel image, borders replicated.
Image<double> sobel_magnitude(const Image<double>& gray);

struct Pixel {
    int row = 0;
    int col = 0;
    bool operator==(const Pixel&) const = default;
    bool operator<(const Pixel& o) const { return row != o.row ? row < o.row : col < o.col; }
};

/// A = I / S with S recomputed from the analytic scene; pixels with S below
/// `shading_floor` are invalid and excluded from every metric.
struct Decomposition {
    Image<double> albedo;
    Image<double> shading;
    Eigen::Array<bool, Eigen::Dynamic, 1> valid;
};

inline constexpr double kShadingFloor = 1e-3;

Decomposition decompose_oracle(const Image<double>& image, const synth::SceneSpec& scene, const Camera& camera,
                               double shading_floor = kShadingFloor);
/// Divides by a given shading image instead of recomputing it.
Decomposition divide_by_shading(const Image<double>& image, const Image<double>& shading,
                                double shading_floor = kShadingFloor);
/// Divides by a given albedo image: the complementary quotient S = I / A.
Decomposition divide_by_albedo(const Image<double>& image, const Image<double>& albedo,
                               double albedo_floor = kShadingFloor);

/// Scene description stored with a synthetic dataset; throws when the dataset
/// has no analytic geometry.
synth::SceneSpec analytic_scene(const Dataset& ds);

/// || X(source) - mean over valid targets of X ||, RGB L2.
double transfer_error(const Image<double>& x, const Eigen::Array<bool, Eigen::Dynamic, 1>& valid, const Pixel& source,
                      const std::vector<Pixel>& targets);

/// sqrt(sum over targets valid before and after of ||Y_after - Y_before||^2).
double decoupling_error(const Image<double>& before, const Eigen::Array<bool, Eigen::Dynamic, 1>& valid_before,
                        const Image<double>& after, const Eigen::Array<bool, Eigen::Dynamic, 1>& valid_after,
                        const std::vector<Pixel>& targets);

/// L2 distance between Sobel edge maps of the luma images, on the targets.
double preservation_error(const Image<double>& before, const Image<double>& after, const std::vector<Pixel>& targets);

struct TransferReport {
    double transfer_error = 0.0;
    double decoupling_error = 0.0;
    double preservation_error = 0.0;
    Image<double> transfer_map;      // ||X(p) - X(source)|| on targets
    Image<double> decoupling_map;    // ||Y_after(p) - Y_before(p)|| on targets
    Image<double> preservation_map;  // |E_after(p) - E_before(p)| on targets
    Json metadata = Json::object();
};

/// Full report for one edit seen from one view. `transferred` is A or S after
/// the edit (the component that should now match the source),
/// `complement_*` the other component before and after.
TransferReport make_report(const Image<double>& transferred, const Eigen::Array<bool, Eigen::Dynamic, 1>& transferred_valid,
                           const Image<double>& complement_before,
                           const Eigen::Array<bool, Eigen::Dynamic, 1>& complement_before_valid,
                           const Image<double>& complement_after,
                           const Eigen::Array<bool, Eigen::Dynamic, 1>& complement_after_valid,
                           const Image<double>& image_before, const Image<double>& image_after, const Pixel& source,
                           const std::vector<Pixel>& targets);

Json to_json(const TransferReport& r);
/// Report JSON plus the three maps as float images in `dir`.
void write_report(const TransferReport& r, const std::filesystem::path& dir);

/// Albedo features of the points visible in a view with the rendered albedo
/// color at each point's projection.
struct FeatureTable {
    std::vector<Eigen::Index> ids;
    Matrix<float> features;  // n x rows
    Matrix<float> colors;    // 3 x rows, linear
};

/// A point is visible when it projects in front of the camera inside the image.
FeatureTable export_features(const Model<float>& model, const Camera& camera);
void write_features_csv(const FeatureTable& table, std::ostream& out);
FeatureTable read_features_csv(std::istream& in);

}  // namespace ipapr::eval
