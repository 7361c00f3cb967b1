#include <cmath>
#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "octseg/losses.hpp"
#include "octseg/softadapt.hpp"

using namespace octseg;

namespace {

BoundarySet bset(Shape shape, std::vector<double> values) {
    return BoundarySet{Tensor::from_data(std::move(shape), std::move(values))};
}

const TopologySchema kSchema = TopologySchema::default_synthetic();

}  // namespace

TEST_CASE("loss_to: ordered zero, violations averaged over width") {
    CHECK(loss_to(bset({2, 1}, {3, 5})).value() == 0.0);
    CHECK(loss_to(bset({2, 1}, {5, 3})).value() == doctest::Approx(2.0));
    // Columns [[5,4],[3,4]] -> (2 + 0) / 2.
    CHECK(loss_to(bset({2, 2}, {5, 4, 3, 4})).value() == doctest::Approx(1.0));
}

TEST_CASE("loss_to of rectified boundaries is always zero") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> rows(0.0, 31.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(4 * 6);
        for (double& v : p) v = rows(rng);
        BoundarySet raw{Tensor::from_data({4, 6}, std::move(p))};
        CHECK(loss_to(rectify_boundaries(raw)).value() == 0.0);
    }
}

TEST_CASE("estimate_kappa: linear ramps give zero, constant curvature survives") {
    const int W = 40;
    std::vector<double> ramp(W);
    for (int i = 0; i < W; ++i) ramp[i] = 3.0 + 0.5 * i;
    CurvatureBounds zero = estimate_kappa({bset({1, W}, ramp)}, 15, {"ILM"});
    CHECK(zero.kappa[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(zero.delta == 15);

    // Parabola p(i) = a i^2 has second difference a*h^2*2 at offset h.
    const double a = 0.3 / (2.0 * 7.0 * 7.0) * 15.0;  // chosen so |..|/15 = 0.3
    std::vector<double> parab(W);
    for (int i = 0; i < W; ++i) parab[i] = 20.0 + a * i * i;
    CurvatureBounds c = estimate_kappa({bset({1, W}, parab)}, 15, {"ILM"});
    CHECK(c.kappa[0] == doctest::Approx(0.3).epsilon(1e-9));

    CHECK_THROWS_AS(estimate_kappa({}, 15, {"ILM"}), std::invalid_argument);
}

TEST_CASE("curvature bounds json round trip") {
    CurvatureBounds b;
    b.delta = 15;
    b.kappa = {0.1, 0.25};
    const std::vector<std::string> names{"ILM", "BM"};
    CurvatureBounds back = CurvatureBounds::from_json(b.to_json(names), names);
    CHECK(back.delta == 15);
    CHECK(back.kappa == b.kappa);
}

TEST_CASE("loss_bc: V-shape second difference against kappa") {
    const int W = 20, h = 7;  // delta 15
    CurvatureBounds bounds;
    bounds.delta = 15;
    bounds.kappa = {0.9334};
    // Boundary flat except a spike of 7 at the center column.
    std::vector<double> v(W, 10.0);
    const int center = 9;
    v[center] += 7.0;
    // At the center column the second difference is |-10 + 2*17 - 10|... use
    // offsets: p[c-h]=10, p[c]=17, p[c+h]=10 -> |14|/15 = 0.9333 <= kappa.
    (void)h;
    CHECK(loss_bc(bset({1, W}, v), bounds).value() == doctest::Approx(0.0).epsilon(1e-9));

    bounds.kappa = {0.4333};
    // Contribution (0.9333 - 0.4333) = 0.5 at one column (plus smaller side
    // terms at columns whose window clips the spike). Check the dominant
    // term by masking: width-normalized, so compare against 0.5/W plus the
    // side contributions computed by hand below.
    double manual = 0.0;
    for (int i = h; i + h < W; ++i) {
        const double second = std::fabs(-v[i - h] + 2 * v[i] - v[i + h]) / 15.0;
        manual += std::max(0.0, second - bounds.kappa[0]);
    }
    CHECK(loss_bc(bset({1, W}, v), bounds).value() == doctest::Approx(manual / W).epsilon(1e-12));

    // Linear boundary: zero for any kappa >= 0 (slope 0.5 is exact in
    // binary so the second difference vanishes identically).
    std::vector<double> lin(W);
    for (int i = 0; i < W; ++i) lin[i] = 2.0 + 0.5 * i;
    bounds.kappa = {0.0};
    CHECK(loss_bc(bset({1, W}, lin), bounds).value() == 0.0);

    bounds.kappa = {0.1, 0.2};
    CHECK_THROWS_AS(loss_bc(bset({1, W}, lin), bounds), std::invalid_argument);
    bounds.kappa = {0.1};
    CHECK_THROWS_AS(loss_bc(bset({1, 10}, std::vector<double>(10, 1.0)), bounds),
                    std::invalid_argument);
}

TEST_CASE("loss_lp: inside-band zero, soft value, hard clamp") {
    const int H = 2, W = 2, K = kSchema.num_lesions();
    // Layer maps all zero -> every band is zero.
    LayerMasks layers{Tensor::zeros({kSchema.num_surfaces(), H, W}),
                      Tensor::zeros({kSchema.num_surfaces() - 1, H, W}), true};

    // Single lesion with L = 0.5 at one pixel, fully outside: -log(0.5)/4.
    std::vector<double> lv(static_cast<size_t>(K + 1) * H * W, 0.0);
    lv[0] = 0.5;
    LesionMasks l{Tensor::from_data({K + 1, H, W}, lv), false, kSchema.lesion_names};
    CHECK(loss_lp(l, layers, kSchema).value() == doctest::Approx(0.17328).epsilon(1e-3));

    // Hard violation L = 1 with eps = 1e-7: -log(1e-7)/4.
    lv[0] = 1.0;
    LesionMasks hard{Tensor::from_data({K + 1, H, W}, lv), false, kSchema.lesion_names};
    CHECK(loss_lp(hard, layers, kSchema).value() == doctest::Approx(4.0295).epsilon(1e-3));

    // Lesions inside admissible bands: exactly zero.
    LayerMasks ones{Tensor::full({kSchema.num_surfaces(), H, W}, 1.0),
                    Tensor::full({kSchema.num_surfaces() - 1, H, W}, 1.0), true};
    LesionMasks inside{Tensor::full({K + 1, H, W}, 1.0), false, kSchema.lesion_names};
    CHECK(loss_lp(inside, ones, kSchema).value() == 0.0);
}

TEST_CASE("loss_lp pushes boundary positions when a lesion sits outside") {
    // A lesion fixed below BM: the gradient with respect to raw positions
    // must be nonzero (the bidirectional mechanism).
    const int S = kSchema.num_surfaces(), K = kSchema.num_lesions();
    const int H = 16, W = 2;
    std::vector<double> p;
    for (int s = 0; s < S; ++s) {
        for (int i = 0; i < W; ++i) p.push_back(2.0 + 2.0 * s);
    }
    Tensor raw = Tensor::from_data({S, W}, std::move(p), true);
    std::vector<double> lv(static_cast<size_t>(K + 1) * H * W, 0.0);
    lv[(2 * H + 14) * W + 0] = 1.0;  // PED pixel far below the SUB_RPE band
    LesionMasks lesions{Tensor::from_data({K + 1, H, W}, lv), false, kSchema.lesion_names};

    BoundarySet rect = rectify_boundaries(BoundarySet{raw});
    LayerMasks layers = surfaces_to_masks(rect, H, false);
    Tensor lp = loss_lp(lesions, layers, kSchema);
    raw.zero_grad();
    lp.backward();
    double norm = 0.0;
    for (double g : raw.grad()) norm += std::fabs(g);
    CHECK(norm > 1e-8);
}

TEST_CASE("loss_kl_boundary: identical distributions and point-mass example") {
    // P == T -> 0.
    GaussianBoundaryTarget t = make_gaussian_target(bset({1, 2}, {2.0, 2.5}), 8, 0.5);
    BoundaryProbMap p{t.values};
    CHECK(loss_kl_boundary(p, t).value() == doctest::Approx(0.0).epsilon(1e-12));

    // T point mass at r=2, P uniform over 4 rows -> ln 4.
    std::vector<double> tvals(4, 0.0);
    tvals[2] = 1.0;
    GaussianBoundaryTarget point{Tensor::from_data({1, 4, 1}, tvals), 0.5};
    BoundaryProbMap uniform{Tensor::full({1, 4, 1}, 0.25)};
    CHECK(loss_kl_boundary(uniform, point).value() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("gaussian target columns sum to one and peak at round(mu)") {
    GaussianBoundaryTarget t = make_gaussian_target(bset({2, 3}, {2.2, 3.7, 9.1, 4.2, 5.6, 7.9}),
                                                    12, 0.5);
    for (int s = 0; s < 2; ++s) {
        for (int i = 0; i < 3; ++i) {
            double total = 0.0, best = -1.0;
            int argmax = -1;
            for (int r = 0; r < 12; ++r) {
                const double v = t.values.at({s, r, i});
                total += v;
                if (v > best) {
                    best = v;
                    argmax = r;
                }
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
            const double mu = s == 0 ? std::vector<double>{2.2, 3.7, 9.1}[i]
                                     : std::vector<double>{4.2, 5.6, 7.9}[i];
            CHECK(argmax == static_cast<int>(std::round(mu)));
        }
    }
}

TEST_CASE("loss_l1_boundary: offsets and squared variant") {
    BoundarySet ref = bset({1, 2}, {3.0, 5.0});
    CHECK(loss_l1_boundary(ref, ref).value() == 0.0);
    CHECK(loss_l1_boundary(bset({1, 2}, {5.0, 7.0}), ref).value() == doctest::Approx(2.0));
    CHECK(loss_l1_boundary(bset({1, 2}, {3.0, 9.0}), ref).value() == doctest::Approx(2.0));
    CHECK(loss_l1_boundary(bset({1, 2}, {5.0, 7.0}), ref, true).value() == doctest::Approx(4.0));
}

TEST_CASE("loss_dice: identity, disjoint, half-overlap") {
    const int K = kSchema.num_lesions();
    auto masks = [&](std::vector<double> first_channel) {
        std::vector<double> v(static_cast<size_t>(K + 1) * 4, 0.0);
        std::copy(first_channel.begin(), first_channel.end(), v.begin());
        return LesionMasks{Tensor::from_data({K + 1, 2, 2}, std::move(v)), true,
                           kSchema.lesion_names};
    };
    // Identical binary masks -> 0 at any smoothing.
    CHECK(loss_dice(masks({1, 1, 0, 0}), masks({1, 1, 0, 0}), 1e-9).value() ==
          doctest::Approx(0.0).epsilon(1e-6));
    // Disjoint nonempty masks with s -> 0: dice loss 1 on that channel,
    // 0 on the empty ones (0/0 with smoothing -> dice 1, loss 0).
    CHECK(loss_dice(masks({1, 0, 0, 0}), masks({0, 1, 0, 0}), 1e-12).value() ==
          doctest::Approx(1.0 / K).epsilon(1e-6));
    // |A| = |B| = 2 overlapping in 1 -> 1 - 2*1/4 = 0.5 on that channel.
    CHECK(loss_dice(masks({1, 1, 0, 0}), masks({0, 1, 1, 0}), 1e-12).value() ==
          doctest::Approx(0.5 / K).epsilon(1e-6));
}

TEST_CASE("loss_rec: region-masked MAE") {
    const int H = 6, W = 2;
    // Boundaries ILM=1, BM=4 -> region rows 1..3.
    std::vector<double> p;
    for (double v : {1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.5, 3.5, 4.0, 4.0}) p.push_back(v);
    LayerMasks layers = surfaces_to_masks(bset({5, 2}, p), H, true);

    Tensor orig = Tensor::full({H, W}, 0.5);
    CHECK(loss_rec(orig, orig, layers).value.value() == 0.0);

    Tensor off = Tensor::full({H, W}, 0.6);
    RecLossResult r = loss_rec(orig, off, layers);
    CHECK(!r.empty_region);
    CHECK(r.value.value() == doctest::Approx(0.1).epsilon(1e-9));

    // Garbage strictly above the ILM does not contribute.
    std::vector<double> garbage(static_cast<size_t>(H) * W, 0.5);
    garbage[0] = 99.0;
    garbage[1] = -7.0;
    CHECK(loss_rec(orig, Tensor::from_data({H, W}, garbage), layers).value.value() == 0.0);

    // Empty region: ILM == BM everywhere.
    LayerMasks empty = surfaces_to_masks(bset({2, 2}, {3.0, 3.0, 3.0, 3.0}), H, true);
    RecLossResult e = loss_rec(orig, off, empty);
    CHECK(e.empty_region);
    CHECK(e.value.value() == 0.0);
}

TEST_CASE("loss_zkl closed-form values") {
    CHECK(loss_zkl(Tensor::zeros({1, 4}), Tensor::zeros({1, 4})).value() == 0.0);
    CHECK(loss_zkl(Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1})).value() ==
          doctest::Approx(0.5));
    CHECK(loss_zkl(Tensor::zeros({1, 1}), Tensor::full({1, 1}, 1.0)).value() ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-9));
}

TEST_CASE("loss_triplet_style: caption direction with literal flag") {
    Tensor base = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor same = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor orth = Tensor::from_data({1, 2}, {0.0, 1.0});
    // sim_a = 1, sim_s = 0 -> desired, zero.
    CHECK(loss_triplet_style(base, same, orth).value() == 0.0);
    // sim_a = 0, sim_s = 1 -> penalized by 1.
    CHECK(loss_triplet_style(base, orth, same).value() == doctest::Approx(1.0));
    // Equal similarity -> margin boundary, zero.
    CHECK(loss_triplet_style(base, same, same).value() == 0.0);
    // Literal equation order flips the operands.
    CHECK(loss_triplet_style(base, same, orth, true).value() == doctest::Approx(1.0));
    CHECK_THROWS_AS(loss_triplet_style(base, Tensor::zeros({1, 2}), orth),
                    std::invalid_argument);
}

TEST_CASE("loss_triplet_anatomy mixed example") {
    // MSE terms via 1-wide boundary sets; dice terms via equal masks.
    auto p = [](double v) { return bset({1, 1}, {v}); };
    Tensor m = Tensor::full({1, 2, 2}, 1.0);
    LesionMasks lm{m, true, {"IRF"}};
    // MSE_s = 4, MSE_a = 1 -> 3; dice terms equal -> 0.
    CHECK(loss_triplet_anatomy(p(0), p(1), p(2), lm, lm, lm).value() == doctest::Approx(3.0));
    // Desired configuration: style closer than affine.
    CHECK(loss_triplet_anatomy(p(0), p(2), p(1), lm, lm, lm).value() == 0.0);
}

TEST_CASE("softadapt: uniform until filled, derived weights, invariants") {
    SoftAdapt adapt(2, 0.1, 10);
    for (int i = 0; i < 5; ++i) {
        adapt.push({1.0, 1.0});
        CHECK(adapt.weights() == std::vector<double>{1.0, 1.0});
    }

    // Spot value for the softmax stage: rates (+1,-1), beta 0.1, equal
    // magnitudes -> (1.0997, 0.9003).
    std::vector<double> w = softadapt_weights_from_rates({1.0, -1.0}, {1.0, 1.0}, 0.1);
    CHECK(w[0] == doctest::Approx(1.0997).epsilon(1e-4));
    CHECK(w[1] == doctest::Approx(0.9003).epsilon(1e-4));

    // beta = 0 with equal magnitudes: uniform regardless of rates.
    std::vector<double> w0 = softadapt_weights_from_rates({3.0, -2.0}, {1.0, 1.0}, 0.0);
    CHECK(w0[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w0[1] == doctest::Approx(1.0).epsilon(1e-12));

    // Identical rates -> uniform.
    std::vector<double> we = softadapt_weights_from_rates({0.3, 0.3}, {2.0, 2.0}, 0.1);
    CHECK(we[0] == doctest::Approx(1.0));
}

TEST_CASE("softadapt history: slowest-improving component wins, sum preserved") {
    const int window = 10;
    SoftAdapt adapt(3, 0.5, window);
    // Component 0 improves fast, 1 slowly, 2 is stagnant; equal magnitude.
    for (int i = 0; i <= window; ++i) {
        adapt.push({10.0 - 0.5 * i, 10.0 - 0.1 * i, 10.0});
    }
    const std::vector<double> w = adapt.weights();
    CHECK(w.size() == 3);
    double total = 0.0;
    for (double v : w) {
        CHECK(v > 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(w[2] > w[1]);
    CHECK(w[1] > w[0]);
}
