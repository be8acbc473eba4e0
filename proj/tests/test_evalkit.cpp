#include "ipapr/evalkit.hpp"
#include "ipapr/image_io.hpp"
#include "support/metric_oracles.hpp"
#include "support/micro.hpp"
#include "support/scenes.hpp"
#include "support/tempdir.hpp"

#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

using namespace ipapr;
using namespace ipapr::eval;

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

Image<double> uniform_image(int h, int w, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> img(h, w, c);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = u(rng);
    return img;
}

}  // namespace

TEST_CASE("psnr and ssim agree with an independent implementation") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> size(8, 24);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int pair = 0; pair < 100; ++pair) {
        const int h = size(rng), w = size(rng);
        const Image<double> gt = uniform_image(h, w, 3, rng);
        Image<double> pred = gt;
        const double sigma = 0.01 + 0.2 * (pair % 10) / 10.0;
        for (Eigen::Index i = 0; i < pred.data.size(); ++i)
            pred.data.data()[i] = std::clamp(pred.data.data()[i] + sigma * noise(rng), 0.0, 1.0);
        CHECK(std::abs(psnr(pred, gt) - double(fixtures::ref_psnr(pred, gt))) <= 1e-9);
        CHECK(std::abs(ssim(pred, gt) - double(fixtures::ref_ssim(pred, gt))) <= 1e-6);
    }
}

TEST_CASE("identical images give the sentinel and unit ssim") {
    std::mt19937_64 rng(3);
    const Image<double> a = uniform_image(16, 16, 3, rng);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    const Json j = to_json(compare_images(a, a));
    CHECK(j["psnr"] == "inf");
    CHECK(j["perceptual"].is_null());
    CHECK_THROWS_AS(psnr(a, Image<double>(16, 15, 3)), ShapeError);
}

TEST_CASE("psnr of a constant offset") {
    Image<double> a(4, 4, 3), b(4, 4, 3);
    a.data.setConstant(0.5);
    b.data.setConstant(0.6);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("perceptual slot is called when present") {
    struct Fixed : PerceptualMetric {
        double distance(const Image<double>&, const Image<double>&) const override { return 0.25; }
    } fixed;
    Image<double> a(4, 4, 3);
    a.data.setConstant(0.2);
    const ImageMetrics m = compare_images(a, a, &fixed);
    REQUIRE(m.perceptual);
    CHECK(*m.perceptual == 0.25);
}

TEST_CASE("sobel magnitude of a vertical step") {
    Image<double> g(5, 6, 1);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) g.at(r, c, 0) = c >= 3 ? 1.0 : 0.0;
    const Image<double> s = sobel_magnitude(g);
    for (int r = 0; r < 5; ++r) {
        CHECK(s.at(r, 0, 0) == 0.0);
        CHECK(s.at(r, 1, 0) == 0.0);
        CHECK(s.at(r, 2, 0) == 4.0);
        CHECK(s.at(r, 3, 0) == 4.0);
        CHECK(s.at(r, 4, 0) == 0.0);
        CHECK(s.at(r, 5, 0) == 0.0);
    }
    Image<double> rgb(1, 1, 3);
    rgb.data << 1.0, 0.0, 0.0;
    CHECK(luma(rgb).data(0, 0) == 0.299);
}

TEST_CASE("decomposition by division masks dark pixels") {
    Image<double> img(1, 3, 3), sh(1, 3, 3);
    img.data << 0.2, 0.3, 0.4, 0.2, 0.3, 0.4, 0.2, 0.3, 0.4;
    sh.data << 0.5, 1e-4, 2.0, 0.5, 0.5, 2.0, 0.5, 0.5, 2.0;
    const Decomposition d = divide_by_shading(img, sh);
    CHECK(d.valid[0]);
    CHECK(!d.valid[1]);
    CHECK(d.valid[2]);
    CHECK(d.albedo.data(0, 0) == 0.4);
    CHECK(d.albedo.data(2, 2) == 0.2);
    const Decomposition e = divide_by_albedo(img, d.albedo);
    CHECK(e.shading.data(0, 0) == 0.5);
    CHECK(!e.valid[1]);
}

TEST_CASE("oracle decomposition recovers the rendered albedo") {
    const synth::SceneSpec scene = fixtures::tiny_orb(24, 2);
    const Camera cam = synth::ring_cameras(scene)[0];
    const synth::IntrinsicImages gt = synth::render_intrinsics(scene, cam);
    const Decomposition d = decompose_oracle(gt.color, scene, cam);
    int checked = 0;
    for (Eigen::Index j = 0; j < gt.color.pixels(); ++j) {
        if (!d.valid[j]) continue;
        CHECK((d.albedo.data.col(j) - gt.albedo.data.col(j)).cwiseAbs().maxCoeff() <= 1e-6);
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("edit metrics match closed forms") {
    Image<double> x(2, 2, 3);
    x.data.setZero();
    x.data.col(0) << 1.0, 0.0, 0.0;   // source
    x.data.col(1) << 0.0, 1.0, 0.0;
    x.data.col(2) << 0.0, 0.0, 1.0;
    x.data.col(3) << 5.0, 5.0, 5.0;   // masked
    Mask valid = Mask::Constant(4, true);
    valid[3] = false;
    const std::vector<Pixel> targets{{0, 1}, {1, 0}, {1, 1}};
    // mean of (0,1,0) and (0,0,1) is (0,.5,.5); distance from (1,0,0) is sqrt(1.5)
    CHECK(transfer_error(x, valid, {0, 0}, targets) == doctest::Approx(std::sqrt(1.5)).epsilon(1e-15));
    CHECK_THROWS_AS(transfer_error(x, valid, {1, 1}, targets), Error);
    CHECK_THROWS_AS(transfer_error(x, valid, {0, 0}, {{1, 1}}), Error);
    CHECK_THROWS_AS(transfer_error(x, valid, {2, 0}, targets), Error);

    Image<double> after = x;
    after.data.col(1) << 0.0, 4.0, 0.0;
    after.data.col(3).setConstant(100.0);
    CHECK(decoupling_error(x, valid, after, valid, targets) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(decoupling_error(x, valid, x, valid, targets) == 0.0);

    Image<double> flat(4, 4, 3), step(4, 4, 3);
    flat.data.setConstant(0.5);
    step = flat;
    for (int r = 0; r < 4; ++r)
        for (int ch = 0; ch < 3; ++ch) step.at(r, 3, ch) = 1.5;
    // luma step 1.0 between columns 2 and 3: sobel 4 on both sides
    CHECK(preservation_error(flat, step, {{0, 2}, {0, 3}, {0, 0}}) == doctest::Approx(std::sqrt(32.0)).epsilon(1e-12));
    CHECK(preservation_error(flat, flat, {{0, 2}}) == 0.0);
}

TEST_CASE("reports carry maps and metadata") {
    std::mt19937_64 rng(5);
    const Image<double> a = uniform_image(6, 6, 3, rng), b = uniform_image(6, 6, 3, rng);
    const Image<double> ib = uniform_image(6, 6, 3, rng), ia = uniform_image(6, 6, 3, rng);
    const Mask all = Mask::Constant(36, true);
    const std::vector<Pixel> targets{{1, 1}, {2, 3}, {5, 5}};
    const TransferReport r = make_report(a, all, b, all, a, all, ib, ia, {0, 0}, targets);
    CHECK(r.transfer_error == transfer_error(a, all, {0, 0}, targets));
    CHECK(r.decoupling_error == decoupling_error(b, all, a, all, targets));
    CHECK(r.preservation_error == preservation_error(ib, ia, targets));
    CHECK(r.transfer_map.at(2, 3, 0) == (a.data.col(a.index(2, 3)) - a.data.col(0)).norm());
    CHECK(r.transfer_map.at(0, 1, 0) == 0.0);
    CHECK(r.metadata["target_pixels"].size() == 3);

    fixtures::TempDir dir;
    write_report(r, dir.path());
    std::ifstream in(dir / "report.json");
    const Json j = Json::parse(in);
    CHECK(j["transfer_error"] == r.transfer_error);
    const Image<float> map = read_pfm(dir / "decoupling_map.pfm");
    CHECK(map.height == 6);
    CHECK(map.at(5, 5, 0) == float(r.decoupling_map.at(5, 5, 0)));
}

TEST_CASE("feature export keeps visible points and round trips through CSV") {
    const Model<float> m = fixtures::micro_model(4, 40, 4).cast<float>();
    const Camera cam = fixtures::micro_camera(8);
    const FeatureTable t = export_features(m, cam);
    std::vector<Eigen::Index> expected;
    for (Eigen::Index i = 0; i < 40; ++i) {
        const Eigen::Vector3d p = m.scene.positions.col(i).cast<double>();
        const Eigen::Vector3d c = cam.rotation * p + cam.translation;
        if (c.z() >= 0.0) continue;
        const double u = cam.focal * (c.x() / -c.z()) + cam.principal.x(), v = cam.focal * (-c.y() / -c.z()) + cam.principal.y();
        if (u >= 0 && v >= 0 && u < cam.width && v < cam.height) expected.push_back(i);
    }
    CHECK(t.ids == expected);
    REQUIRE(!t.ids.empty());
    CHECK(t.features.col(0) == m.scene.albedo_features.col(t.ids[0]));

    std::stringstream csv;
    write_features_csv(t, csv);
    CHECK(csv.str().rfind("point_id,a0,a1,a2,a3,r,g,b\n", 0) == 0);
    const FeatureTable back = read_features_csv(csv);
    CHECK(back.ids == t.ids);
    CHECK(back.features == t.features);
    CHECK(back.colors == t.colors);

    std::stringstream bad("point_id,a0,r,g,b\n3,1,2\n");
    CHECK_THROWS_AS(read_features_csv(bad), Error);
}
