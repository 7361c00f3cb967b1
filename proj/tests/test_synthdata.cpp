#include <cstring>
#include <filesystem>
#include <random>

#include <doctest.h>

#include "octseg/synthdata.hpp"
#include "octseg/topology.hpp"

using namespace octseg;

namespace {

const TopologySchema kSchema = TopologySchema::default_synthetic();

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), sizeof(double) * a.data().size()) == 0;
}

}  // namespace

TEST_CASE("generate_scan is deterministic per seed") {
    SceneConfig cfg;
    const LabeledScan a = generate_scan(42, cfg, kSchema);
    const LabeledScan b = generate_scan(42, cfg, kSchema);
    CHECK(bits_equal(a.image, b.image));
    CHECK(bits_equal(a.gt_boundaries, b.gt_boundaries));
    CHECK(bits_equal(a.gt_lesions, b.gt_lesions));
    const LabeledScan c = generate_scan(43, cfg, kSchema);
    CHECK(!bits_equal(a.image, c.image));
}

TEST_CASE("generated ground truth satisfies both topology invariants") {
    SceneConfig cfg;
    cfg.placement = LesionPlacement::kRandom;
    int with_lesions = 0;
    for (int i = 0; i < 300; ++i) {
        const LabeledScan scan = generate_scan(scan_seed(7, i), cfg, kSchema);
        BoundarySet set{scan.gt_boundaries};
        CHECK(count_ordering_violations(set) == 0);
        LesionMasks lesions{scan.gt_lesions, true, kSchema.lesion_names};
        const ViolationReport rep = audit_topology(set, lesions, kSchema);
        CHECK(rep.confinement == 0);
        if (scan.has_lesion()) ++with_lesions;
    }
    CHECK(with_lesions > 100);
}

TEST_CASE("placement modes control lesion presence") {
    SceneConfig none;
    none.placement = LesionPlacement::kNone;
    SceneConfig force;
    force.placement = LesionPlacement::kForce;
    for (int i = 0; i < 40; ++i) {
        CHECK(!generate_scan(scan_seed(11, i), none, kSchema).has_lesion());
        CHECK(generate_scan(scan_seed(11, i), force, kSchema).has_lesion());
    }
}

TEST_CASE("scene config validation rejects flat contrast") {
    SceneConfig cfg;
    cfg.layer_intensity = {0.5, 0.55, 0.9, 0.8};  // 0.05 step violates contrast
    CHECK_THROWS_AS(cfg.validate(kSchema), std::invalid_argument);
    SceneConfig bad_order;
    bad_order.surface_frac = {0.3, 0.2, 0.5, 0.6, 0.7};
    CHECK_THROWS_AS(bad_order.validate(kSchema), std::invalid_argument);
}

TEST_CASE("spatial transform: identity parameters leave the scan unchanged") {
    const LabeledScan scan = generate_scan(5, SceneConfig{}, kSchema);
    const LabeledScan same = apply_spatial_transform(scan, SpatialTransformParams{});
    for (size_t i = 0; i < scan.image.data().size(); ++i) {
        CHECK(same.image.data()[i] == doctest::Approx(scan.image.data()[i]).epsilon(1e-12));
    }
    for (size_t i = 0; i < scan.gt_boundaries.data().size(); ++i) {
        CHECK(same.gt_boundaries.data()[i] ==
              doctest::Approx(scan.gt_boundaries.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("pure x-translation shifts boundary columns") {
    const LabeledScan scan = generate_scan(6, SceneConfig{}, kSchema);
    SpatialTransformParams p;
    p.translate_x_frac = 4.0 / scan.cols();  // 4 columns right
    const LabeledScan moved = apply_spatial_transform(scan, p);
    const int W = scan.cols();
    for (int s = 0; s < scan.gt_boundaries.shape()[0]; ++s) {
        for (int c = 10; c < W - 10; ++c) {
            CHECK(moved.gt_boundaries.at({s, c}) ==
                  doctest::Approx(scan.gt_boundaries.at({s, c - 4})).epsilon(1e-6));
        }
    }
}

TEST_CASE("sampled spatial parameters stay inside the documented ranges") {
    std::mt19937_64 rng(123);
    for (int i = 0; i < 1000; ++i) {
        const SpatialTransformParams p = sample_spatial_params(rng);
        CHECK(p.rotation_rad >= -0.2);
        CHECK(p.rotation_rad <= 0.2);
        CHECK(p.shear_x >= -0.2);
        CHECK(p.shear_x <= 0.2);
        CHECK(p.shear_y >= -0.2);
        CHECK(p.shear_y <= 0.2);
        CHECK(p.translate_x_frac >= -0.3);
        CHECK(p.translate_x_frac <= 0.3);
        CHECK(p.scale_x >= 0.9);
        CHECK(p.scale_x <= 1.1);
    }
}

TEST_CASE("spatial transform keeps ground truth ordered") {
    std::mt19937_64 rng(321);
    const LabeledScan scan = generate_scan(8, SceneConfig{}, kSchema);
    for (int i = 0; i < 50; ++i) {
        const LabeledScan t = apply_spatial_transform(scan, 1000 + i);
        CHECK(count_ordering_violations(BoundarySet{t.gt_boundaries}) == 0);
    }
    (void)rng;
}

TEST_CASE("transform-then-extract matches extract-then-transform within half a pixel") {
    // Extract-then-transform: the library's analytic boundary mapping.
    // Transform-then-extract: warp the soft surface map like an image (by
    // feeding it through the same transform as a scan image) and read the
    // 0.5 crossing back out per column.
    SceneConfig cfg;
    cfg.placement = LesionPlacement::kNone;
    const LabeledScan scan = generate_scan(17, cfg, kSchema);
    const int H = scan.rows(), W = scan.cols();
    const int S = scan.gt_boundaries.shape()[0];
    SpatialTransformParams p;
    p.rotation_rad = 0.08;
    p.shear_x = 0.05;
    p.translate_x_frac = 0.05;
    p.scale_x = 1.02;
    const LabeledScan moved = apply_spatial_transform(scan, p);

    // Sharper logistic ramp so bilinear warping of the ramp stays a good
    // sub-pixel localizer: sigmoid(4 (r - p)).
    LayerMasks masks = surfaces_to_masks(
        BoundarySet{mul_scalar(Tensor::from_data({S, W}, scan.gt_boundaries.data()), 1.0)}, H,
        false);
    int compared = 0;
    for (int s = 0; s < S; ++s) {
        LabeledScan carrier = scan;
        std::vector<double> plane(static_cast<size_t>(H) * W);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) plane[static_cast<size_t>(r) * W + c] =
                masks.surface_maps.at({s, r, c});
        }
        carrier.image = Tensor::from_data({H, W}, std::move(plane));
        const LabeledScan warped = apply_spatial_transform(carrier, p);
        for (int c = 6; c < W - 6; ++c) {
            double crossing = -1.0;
            for (int r = 1; r < H; ++r) {
                const double lo = warped.image.at({r - 1, c});
                const double hi = warped.image.at({r, c});
                if (lo < 0.5 && hi >= 0.5) {
                    crossing = (r - 1) + (0.5 - lo) / (hi - lo);
                    break;
                }
            }
            const double analytic = moved.gt_boundaries.at({s, c});
            if (crossing < 0.0 || analytic < 2.0 || analytic > H - 3.0) continue;
            CHECK(std::fabs(crossing - analytic) < 0.5);
            ++compared;
        }
    }
    CHECK(compared > 100);
}

TEST_CASE("style transform: annotations bit-identical, misses leave image unchanged") {
    const LabeledScan scan = generate_scan(9, SceneConfig{}, kSchema);
    // Seed 1 draw: probability that all four ops miss is high per round;
    // find a seed where nothing fires.
    bool found_identity = false;
    for (std::uint64_t seed = 0; seed < 50 && !found_identity; ++seed) {
        const LabeledScan t = apply_style_transform(scan, seed, false);
        CHECK(bits_equal(t.gt_boundaries, scan.gt_boundaries));
        CHECK(bits_equal(t.gt_lesions, scan.gt_lesions));
        if (bits_equal(t.image, scan.image)) found_identity = true;
    }
    CHECK(found_identity);

    // Forced transforms must touch the image.
    int changed = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const LabeledScan t = apply_style_transform(scan, seed, true);
        if (!bits_equal(t.image, scan.image)) ++changed;
        CHECK(bits_equal(t.gt_boundaries, scan.gt_boundaries));
    }
    CHECK(changed == 20);
}

TEST_CASE("scan persistence round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "octseg_test_scan";
    fs::remove_all(dir);
    SceneConfig cfg;
    cfg.placement = LesionPlacement::kForce;
    LabeledScan scan = generate_scan(77, cfg, kSchema);
    scan.mode = AnnotationMode::kLesionsOnly;
    save_scan(dir, scan, kSchema);
    const LabeledScan back = load_scan(dir, kSchema);
    CHECK(back.mode == AnnotationMode::kLesionsOnly);
    CHECK(back.seed == 77);
    CHECK(bits_equal(back.gt_boundaries, scan.gt_boundaries));
    CHECK(bits_equal(back.gt_lesions, scan.gt_lesions));
    // Image is 16-bit quantized.
    for (size_t i = 0; i < scan.image.data().size(); ++i) {
        CHECK(back.image.data()[i] ==
              doctest::Approx(scan.image.data()[i]).epsilon(1.0 / 65000));
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset round trip preserves order and modes") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "octseg_test_ds";
    fs::remove_all(dir);
    Dataset ds = make_dataset(3, 5, SceneConfig{}, kSchema);
    ds.scans[2].mode = AnnotationMode::kUnlabeled;
    save_dataset(dir, ds);
    const Dataset back = load_dataset(dir);
    REQUIRE(back.scans.size() == 5);
    CHECK(back.scans[2].mode == AnnotationMode::kUnlabeled);
    CHECK(bits_equal(back.scans[4].gt_boundaries, ds.scans[4].gt_boundaries));
    CHECK(back.schema.surfaces == kSchema.surfaces);
    fs::remove_all(dir);
}
