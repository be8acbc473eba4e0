#include "ipapr/evalkit.hpp"

#include "ipapr/image_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ipapr::eval {

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

Eigen::VectorXd gaussian_window(int size, double sigma) {
    Eigen::VectorXd g(size);
    const double c = 0.5 * (size - 1);
    for (int i = 0; i < size; ++i) g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    return g / g.sum();
}

/// Valid-region separable filtering of one channel stored row-major in `x`.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& x, const Eigen::VectorXd& g) {
    const int w = int(g.size());
    const Eigen::Index rows = x.rows() - w + 1, cols = x.cols() - w + 1;
    Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(x.rows(), cols);
    for (int k = 0; k < w; ++k) tmp += g[k] * x.middleCols(k, cols);
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
    for (int k = 0; k < w; ++k) out += g[k] * tmp.middleRows(k, rows);
    return out;
}

Eigen::ArrayXXd channel(const Image<double>& img, int c) {
    Eigen::ArrayXXd out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col) out(r, col) = img.at(r, col, c);
    return out;
}

void check_pixel(const Image<double>& img, const Pixel& p, const char* what) {
    if (p.row < 0 || p.col < 0 || p.row >= img.height || p.col >= img.width)
        throw Error(std::string(what) + " pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                    ") is outside the image");
}

void put_float(std::ostream& out, float v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, res.ptr - buf);
}

}  // namespace

double psnr(const Image<double>& pred, const Image<double>& gt) {
    require_same_shape(pred, gt, "psnr");
    const double mse = (pred.data - gt.data).squaredNorm() / double(pred.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image<double>& pred, const Image<double>& gt) {
    require_same_shape(pred, gt, "ssim");
    int w = std::min({11, pred.height, pred.width});
    if (w % 2 == 0) w -= 1;
    const Eigen::VectorXd g = gaussian_window(w, 1.5);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int c = 0; c < pred.channels(); ++c) {
        const Eigen::ArrayXXd x = channel(pred, c), y = channel(gt, c);
        const Eigen::ArrayXXd mx = filter_valid(x, g), my = filter_valid(y, g);
        const Eigen::ArrayXXd sxx = filter_valid(x * x, g) - mx * mx;
        const Eigen::ArrayXXd syy = filter_valid(y * y, g) - my * my;
        const Eigen::ArrayXXd sxy = filter_valid(x * y, g) - mx * my;
        const Eigen::ArrayXXd map =
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
        total += map.mean();
    }
    return total / pred.channels();
}

ImageMetrics compare_images(const Image<double>& pred, const Image<double>& gt, const PerceptualMetric* perc) {
    ImageMetrics m;
    m.psnr = psnr(pred, gt);
    m.ssim = ssim(pred, gt);
    if (perc) m.perceptual = perc->distance(pred, gt);
    return m;
}

Json to_json(const ImageMetrics& m) {
    Json j{{"psnr", std::isinf(m.psnr) ? Json("inf") : Json(m.psnr)}, {"ssim", m.ssim}};
    j["perceptual"] = m.perceptual ? Json(*m.perceptual) : Json(nullptr);
    return j;
}

Image<double> luma(const Image<double>& rgb) {
    if (rgb.channels() != 3) throw ShapeError("luma: expected 3 channels");
    Image<double> out(rgb.height, rgb.width, 1);
    out.data = 0.299 * rgb.data.row(0) + 0.587 * rgb.data.row(1) + 0.114 * rgb.data.row(2);
    return out;
}

Image<double> sobel_magnitude(const Image<double>& gray) {
    if (gray.channels() != 1) throw ShapeError("sobel_magnitude: expected one channel");
    Image<double> out(gray.height, gray.width, 1);
    auto at = [&](int r, int c) {
        r = std::clamp(r, 0, gray.height - 1);
        c = std::clamp(c, 0, gray.width - 1);
        return gray.at(r, c, 0);
    };
    for (int r = 0; r < gray.height; ++r) {
        for (int c = 0; c < gray.width; ++c) {
            const double gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            const double gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.at(r, c, 0) = std::sqrt(gx * gx + gy * gy);
        }
    }
    return out;
}

Decomposition divide_by_shading(const Image<double>& image, const Image<double>& shading, double floor) {
    require_same_shape(image, shading, "decompose");
    Decomposition d{Image<double>(image.height, image.width, image.channels()), shading,
                    Mask::Constant(image.pixels(), true)};
    for (Eigen::Index j = 0; j < image.pixels(); ++j) {
        if (shading.data.col(j).minCoeff() < floor) {
            d.valid[j] = false;
            continue;
        }
        d.albedo.data.col(j) = image.data.col(j).cwiseQuotient(shading.data.col(j));
    }
    return d;
}

Decomposition divide_by_albedo(const Image<double>& image, const Image<double>& albedo, double floor) {
    require_same_shape(image, albedo, "decompose");
    Decomposition d{albedo, Image<double>(image.height, image.width, image.channels()),
                    Mask::Constant(image.pixels(), true)};
    for (Eigen::Index j = 0; j < image.pixels(); ++j) {
        if (albedo.data.col(j).minCoeff() < floor) {
            d.valid[j] = false;
            continue;
        }
        d.shading.data.col(j) = image.data.col(j).cwiseQuotient(albedo.data.col(j));
    }
    return d;
}

Decomposition decompose_oracle(const Image<double>& image, const synth::SceneSpec& scene, const Camera& camera,
                               double floor) {
    if (image.height != camera.height || image.width != camera.width || image.channels() != 3)
        throw ShapeError("decompose_oracle: image does not match the camera");
    const synth::IntrinsicImages gt = synth::render_intrinsics(scene, camera);
    return divide_by_shading(image, gt.shading, floor);
}

synth::SceneSpec analytic_scene(const Dataset& ds) {
    if (ds.scene.is_null()) throw Error("dataset has no analytic geometry (not produced by datagen)");
    return synth::scene_spec_from_json(ds.scene);
}

double transfer_error(const Image<double>& x, const Mask& valid, const Pixel& source, const std::vector<Pixel>& targets) {
    check_pixel(x, source, "source");
    if (!valid[x.index(source.row, source.col)]) throw Error("transfer_error: source pixel is masked");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.channels());
    int n = 0;
    for (const Pixel& p : targets) {
        check_pixel(x, p, "target");
        const Eigen::Index j = x.index(p.row, p.col);
        if (!valid[j]) continue;
        mean += x.data.col(j);
        ++n;
    }
    if (n == 0) throw Error("transfer_error: all target pixels are masked");
    return (x.data.col(x.index(source.row, source.col)) - mean / n).norm();
}

double decoupling_error(const Image<double>& before, const Mask& valid_before, const Image<double>& after,
                        const Mask& valid_after, const std::vector<Pixel>& targets) {
    require_same_shape(before, after, "decoupling_error");
    double sum = 0.0;
    int n = 0;
    for (const Pixel& p : targets) {
        check_pixel(before, p, "target");
        const Eigen::Index j = before.index(p.row, p.col);
        if (!valid_before[j] || !valid_after[j]) continue;
        sum += (after.data.col(j) - before.data.col(j)).squaredNorm();
        ++n;
    }
    if (n == 0 && !targets.empty()) throw Error("decoupling_error: all target pixels are masked");
    return std::sqrt(sum);
}

double preservation_error(const Image<double>& before, const Image<double>& after, const std::vector<Pixel>& targets) {
    require_same_shape(before, after, "preservation_error");
    const Image<double> eb = sobel_magnitude(luma(before)), ea = sobel_magnitude(luma(after));
    double sum = 0.0;
    for (const Pixel& p : targets) {
        check_pixel(before, p, "target");
        const double d = ea.at(p.row, p.col, 0) - eb.at(p.row, p.col, 0);
        sum += d * d;
    }
    return std::sqrt(sum);
}

TransferReport make_report(const Image<double>& transferred, const Mask& transferred_valid,
                           const Image<double>& complement_before, const Mask& complement_before_valid,
                           const Image<double>& complement_after, const Mask& complement_after_valid,
                           const Image<double>& image_before, const Image<double>& image_after, const Pixel& source,
                           const std::vector<Pixel>& targets) {
    TransferReport r;
    r.transfer_error = transfer_error(transferred, transferred_valid, source, targets);
    r.decoupling_error =
        decoupling_error(complement_before, complement_before_valid, complement_after, complement_after_valid, targets);
    r.preservation_error = preservation_error(image_before, image_after, targets);

    const int h = transferred.height, w = transferred.width;
    r.transfer_map = Image<double>(h, w, 1);
    r.decoupling_map = Image<double>(h, w, 1);
    r.preservation_map = Image<double>(h, w, 1);
    const Eigen::VectorXd src = transferred.data.col(transferred.index(source.row, source.col));
    const Image<double> eb = sobel_magnitude(luma(image_before)), ea = sobel_magnitude(luma(image_after));
    Json px = Json::array();
    for (const Pixel& p : targets) {
        const Eigen::Index j = transferred.index(p.row, p.col);
        if (transferred_valid[j]) r.transfer_map.data(0, j) = (transferred.data.col(j) - src).norm();
        if (complement_before_valid[j] && complement_after_valid[j])
            r.decoupling_map.data(0, j) = (complement_after.data.col(j) - complement_before.data.col(j)).norm();
        r.preservation_map.data(0, j) = std::abs(ea.data(0, j) - eb.data(0, j));
        px.push_back({p.row, p.col});
    }
    r.metadata["source_pixel"] = {source.row, source.col};
    r.metadata["target_pixels"] = px;
    return r;
}

Json to_json(const TransferReport& r) {
    return {{"transfer_error", r.transfer_error},
            {"decoupling_error", r.decoupling_error},
            {"preservation_error", r.preservation_error},
            {"maps", {{"transfer", "transfer_map.pfm"}, {"decoupling", "decoupling_map.pfm"},
                      {"preservation", "preservation_map.pfm"}}},
            {"metadata", r.metadata}};
}

void write_report(const TransferReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_pfm(dir / "transfer_map.pfm", r.transfer_map.cast<float>());
    write_pfm(dir / "decoupling_map.pfm", r.decoupling_map.cast<float>());
    write_pfm(dir / "preservation_map.pfm", r.preservation_map.cast<float>());
    std::ofstream out(dir / "report.json");
    out << to_json(r).dump(2) << '\n';
}

FeatureTable export_features(const Model<float>& model, const Camera& camera) {
    const RenderOutput<float> out = render_view(model, camera);
    const Image<float> albedo = out.albedo_linear();
    const PointScene<float>& s = model.scene;
    FeatureTable t;
    std::vector<Eigen::Index> cols;
    std::vector<Eigen::Index> pix;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const Eigen::Vector3d p = camera.project(s.positions.col(i).cast<double>());
        if (!(p.z() > 0.0)) continue;
        const double x = std::floor(p.x()), y = std::floor(p.y());
        if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) continue;
        t.ids.push_back(i);
        pix.push_back(albedo.index(int(y), int(x)));
    }
    t.features = s.albedo_features(Eigen::all, t.ids);
    t.colors.resize(3, Eigen::Index(pix.size()));
    for (std::size_t k = 0; k < pix.size(); ++k) t.colors.col(Eigen::Index(k)) = albedo.data.col(pix[k]);
    return t;
}

void write_features_csv(const FeatureTable& t, std::ostream& out) {
    out << "point_id";
    for (Eigen::Index k = 0; k < t.features.rows(); ++k) out << ",a" << k;
    out << ",r,g,b\n";
    for (std::size_t row = 0; row < t.ids.size(); ++row) {
        out << t.ids[row];
        for (Eigen::Index k = 0; k < t.features.rows(); ++k) {
            out << ',';
            put_float(out, t.features(k, Eigen::Index(row)));
        }
        for (int c = 0; c < 3; ++c) {
            out << ',';
            put_float(out, t.colors(c, Eigen::Index(row)));
        }
        out << '\n';
    }
}

FeatureTable read_features_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("feature CSV is empty");
    const Eigen::Index columns = std::count(line.begin(), line.end(), ',') + 1;
    const Eigen::Index dim = columns - 4;
    if (dim < 1) throw Error("feature CSV header has too few columns");
    std::vector<std::vector<float>> rows;
    FeatureTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<float> vals;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        Eigen::Index id = 0;
        auto r = std::from_chars(p, end, id);
        if (r.ec != std::errc()) throw Error("feature CSV: bad point id");
        p = r.ptr;
        while (p < end) {
            if (*p != ',') throw Error("feature CSV: expected ','");
            float v = 0.0f;
            r = std::from_chars(p + 1, end, v);
            if (r.ec != std::errc()) throw Error("feature CSV: bad number");
            vals.push_back(v);
            p = r.ptr;
        }
        if (Eigen::Index(vals.size()) != columns - 1) throw Error("feature CSV: wrong number of columns");
        t.ids.push_back(id);
        rows.push_back(std::move(vals));
    }
    t.features.resize(dim, Eigen::Index(rows.size()));
    t.colors.resize(3, Eigen::Index(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index k = 0; k < dim; ++k) t.features(k, Eigen::Index(i)) = rows[i][k];
        for (int c = 0; c < 3; ++c) t.colors(c, Eigen::Index(i)) = rows[i][dim + c];
    }
    return t;
}

}  // namespace ipapr::eval
