#include <cmath>
#include <random>

#include "octseg/grad_check.hpp"
#include "octseg/losses.hpp"
#include "octseg/topology.hpp"

namespace octseg {

namespace {

using Sampler = std::function<std::vector<Tensor>(std::uint64_t)>;

Sampler uniform_sampler(std::vector<Shape> shapes, double lo, double hi) {
    return [shapes = std::move(shapes), lo, hi](std::uint64_t seed) {
        return random_inputs(shapes, seed, lo, hi);
    };
}

struct Case {
    std::string name;
    Sampler sampler;
    TensorFn fn;
};

std::vector<Case> build_cases() {
    std::vector<Case> cases;
    auto add_case = [&cases](std::string name, Sampler s, TensorFn f) {
        cases.push_back({std::move(name), std::move(s), std::move(f)});
    };

    const Shape s23{2, 3};
    add_case("add", uniform_sampler({s23, s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return add(in[0], in[1]); });
    add_case("add_broadcast", uniform_sampler({{2, 3, 4}, {3, 1}}, -3, 3),
             [](const std::vector<Tensor>& in) { return add(in[0], in[1]); });
    add_case("sub", uniform_sampler({s23, s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); });
    add_case("mul", uniform_sampler({s23, s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); });
    add_case("div", uniform_sampler({s23, s23}, 0.5, 3.0),
             [](const std::vector<Tensor>& in) { return div(in[0], in[1]); });
    add_case("matmul", uniform_sampler({{3, 4}, {4, 2}}, -2, 2),
             [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); });
    add_case("conv2d", uniform_sampler({{2, 6, 6}, {3, 2, 3, 3}, {3}}, -1.2, 1.2),
             [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1); });
    add_case("relu", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return relu(in[0]); });
    add_case("abs", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return abs(in[0]); });
    add_case("sigmoid", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return sigmoid(in[0]); });
    add_case("exp", uniform_sampler({s23}, -2, 2),
             [](const std::vector<Tensor>& in) { return exp(in[0]); });
    add_case("log", uniform_sampler({s23}, 0.1, 3.0),
             [](const std::vector<Tensor>& in) { return log(in[0]); });
    add_case("sqrt", uniform_sampler({s23}, 0.1, 3.0),
             [](const std::vector<Tensor>& in) { return sqrt(in[0]); });
    add_case("clamp", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return clamp(in[0], -1.0, 1.0); });
    add_case("min_bt", uniform_sampler({s23, s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return min_bt(in[0], in[1]); });
    add_case("softmax", uniform_sampler({{2, 4, 3}}, -3, 3),
             [](const std::vector<Tensor>& in) { return softmax(in[0], 1); });
    add_case("sum", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return sum(in[0]); });
    add_case("sum_axis", uniform_sampler({{2, 3, 4}}, -3, 3),
             [](const std::vector<Tensor>& in) { return sum(in[0], 1); });
    add_case("mean", uniform_sampler({s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return mean(in[0]); });
    add_case("mean_axis", uniform_sampler({{2, 3, 4}}, -3, 3),
             [](const std::vector<Tensor>& in) { return mean(in[0], 2); });
    add_case("concat", uniform_sampler({{2, 3}, {1, 3}}, -3, 3),
             [](const std::vector<Tensor>& in) { return concat({in[0], in[1]}, 0); });
    add_case("slice", uniform_sampler({{3, 5}}, -3, 3),
             [](const std::vector<Tensor>& in) { return slice(in[0], 1, 1, 3); });
    add_case("pad", uniform_sampler({{2, 3}}, -3, 3),
             [](const std::vector<Tensor>& in) { return pad(in[0], {{1, 0}, {2, 1}}); });
    add_case("reshape", uniform_sampler({{2, 6}}, -3, 3),
             [](const std::vector<Tensor>& in) { return reshape(in[0], {3, 4}); });
    add_case("avg_pool2", uniform_sampler({{2, 4, 6}}, -3, 3),
             [](const std::vector<Tensor>& in) { return avg_pool2(in[0]); });
    add_case("upsample2", uniform_sampler({{2, 3, 2}}, -3, 3),
             [](const std::vector<Tensor>& in) { return upsample2(in[0]); });
    add_case("mse", uniform_sampler({s23, s23}, -3, 3),
             [](const std::vector<Tensor>& in) { return mse(in[0], in[1]); });
    add_case("cosine_similarity", uniform_sampler({{5}, {5}}, 0.3, 3.0),
             [](const std::vector<Tensor>& in) { return cosine_similarity(in[0], in[1]); });

    // Losses on small instances.
    const TopologySchema schema = TopologySchema::default_synthetic();
    const int S = schema.num_surfaces(), K = schema.num_lesions();
    const int H = 12, W = 8;

    // Strictly ordered positions with room between surfaces so min_bt ties
    // and relu kinks stay clear of the sample point.
    auto positions_sampler = [S, W, H](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> gap(0.4, (H - 2.0) / (S + 1));
        std::uniform_real_distribution<double> jitter(-0.15, 0.15);
        std::vector<double> p(static_cast<size_t>(S) * W);
        for (int i = 0; i < W; ++i) {
            double depth = 1.0 + gap(rng);
            for (int s = 0; s < S; ++s) {
                p[static_cast<size_t>(s) * W + i] = depth + jitter(rng);
                depth += gap(rng);
            }
        }
        return std::vector<Tensor>{Tensor::from_data({S, W}, std::move(p), true)};
    };
    auto scrambled_positions_sampler = [S, W, H](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> rows(0.0, H - 1.0);
        std::vector<double> p(static_cast<size_t>(S) * W);
        for (double& v : p) v = rows(rng);
        return std::vector<Tensor>{Tensor::from_data({S, W}, std::move(p), true)};
    };

    add_case("loss_to", scrambled_positions_sampler, [](const std::vector<Tensor>& in) {
        return loss_to(BoundarySet{in[0]});
    });
    {
        CurvatureBounds bounds;
        bounds.delta = 5;
        bounds.kappa.assign(S, 0.35);
        add_case("loss_bc", scrambled_positions_sampler,
                 [bounds](const std::vector<Tensor>& in) {
                     return loss_bc(BoundarySet{in[0]}, bounds);
                 });
    }
    {
        // Soft-mask variant; lesion values away from the log-clamp floor.
        auto sampler = [positions_sampler, K, H, W](std::uint64_t seed) {
            std::vector<Tensor> out = positions_sampler(seed);
            std::mt19937_64 rng(seed ^ 0xabcdefull);
            std::uniform_real_distribution<double> mass(0.05, 0.85);
            std::vector<double> l(static_cast<size_t>(K + 1) * H * W);
            for (double& v : l) v = mass(rng);
            out.push_back(Tensor::from_data({K + 1, H, W}, std::move(l), true));
            return out;
        };
        add_case("loss_lp", sampler, [schema, H](const std::vector<Tensor>& in) {
            BoundarySet rect = rectify_boundaries(BoundarySet{in[0]});
            LayerMasks layers = surfaces_to_masks(rect, H, false);
            LesionMasks lesions{in[1], false, schema.lesion_names};
            return loss_lp(lesions, layers, schema);
        });
    }
    {
        auto sampler = uniform_sampler({{2, 6, 4}}, -2.5, 2.5);
        std::mt19937_64 rng(424242);
        std::uniform_real_distribution<double> rowpos(1.0, 4.5);
        std::vector<double> mu(2 * 4);
        for (double& v : mu) v = rowpos(rng);
        GaussianBoundaryTarget target =
            make_gaussian_target(BoundarySet{Tensor::from_data({2, 4}, mu)}, 6, 0.8);
        add_case("loss_kl_boundary", sampler, [target](const std::vector<Tensor>& in) {
            return loss_kl_boundary(BoundaryProbMap{softmax(in[0], 1)}, target);
        });
    }
    add_case("loss_l1_boundary", scrambled_positions_sampler,
             [S, W](const std::vector<Tensor>& in) {
                 Tensor ref = Tensor::full({S, W}, 5.25);
                 return loss_l1_boundary(BoundarySet{in[0]}, BoundarySet{ref});
             });
    {
        auto sampler = uniform_sampler({{K + 1, 5, 4}, {K + 1, 5, 4}}, 0.05, 0.95);
        add_case("loss_dice", sampler, [schema](const std::vector<Tensor>& in) {
            LesionMasks pred{in[0], true, schema.lesion_names};
            LesionMasks ref{in[1], true, schema.lesion_names};
            return loss_dice(pred, ref);
        });
    }
    {
        auto sampler = [positions_sampler, H, W](std::uint64_t seed) {
            std::vector<Tensor> out = positions_sampler(seed);
            std::mt19937_64 rng(seed ^ 0x111111ull);
            std::uniform_real_distribution<double> pix(0.0, 1.0);
            std::vector<double> a(static_cast<size_t>(H) * W), b(a.size());
            for (double& v : a) v = pix(rng);
            for (double& v : b) v = pix(rng);
            out.push_back(Tensor::from_data({H, W}, std::move(a), true));
            out.push_back(Tensor::from_data({H, W}, std::move(b), true));
            return out;
        };
        add_case("loss_rec", sampler, [H](const std::vector<Tensor>& in) {
            LayerMasks layers = surfaces_to_masks(rectify_boundaries(BoundarySet{in[0]}), H,
                                                  false);
            return loss_rec(in[1], in[2], layers).value;
        });
    }
    add_case("loss_zkl", uniform_sampler({{1, 6}, {1, 6}}, -1.5, 1.5),
             [](const std::vector<Tensor>& in) { return loss_zkl(in[0], in[1]); });
    add_case("loss_triplet_style", uniform_sampler({{1, 6}, {1, 6}, {1, 6}}, 0.2, 2.0),
             [](const std::vector<Tensor>& in) {
                 return loss_triplet_style(in[0], in[1], in[2]);
             });
    {
        auto sampler = [scrambled_positions_sampler, K, H, W](std::uint64_t seed) {
            std::vector<Tensor> out;
            for (int t = 0; t < 3; ++t) {
                auto p = scrambled_positions_sampler(seed ^ (0x9e37ull * (t + 1)));
                out.push_back(p[0]);
            }
            std::mt19937_64 rng(seed ^ 0x222222ull);
            std::uniform_real_distribution<double> mass(0.05, 0.95);
            for (int t = 0; t < 3; ++t) {
                std::vector<double> l(static_cast<size_t>(K + 1) * H * W);
                for (double& v : l) v = mass(rng);
                out.push_back(Tensor::from_data({K + 1, H, W}, std::move(l), true));
            }
            return out;
        };
        add_case("loss_triplet_anatomy", sampler,
                 [schema](const std::vector<Tensor>& in) {
                     return loss_triplet_anatomy(
                         BoundarySet{in[0]}, BoundarySet{in[1]}, BoundarySet{in[2]},
                         LesionMasks{in[3], true, schema.lesion_names},
                         LesionMasks{in[4], true, schema.lesion_names},
                         LesionMasks{in[5], true, schema.lesion_names});
                 });
    }
    {
        // The composed rectify -> sigmoid(A - P) -> layer-map pipeline.
        auto sampler = [](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<double> rows(0.0, 3.0);
            std::vector<double> p(4 * 3);
            for (double& v : p) v = rows(rng);
            return std::vector<Tensor>{Tensor::from_data({4, 3}, std::move(p), true)};
        };
        add_case("surface_mask_pipeline", sampler, [](const std::vector<Tensor>& in) {
            BoundarySet rect = rectify_boundaries(BoundarySet{in[0]});
            LayerMasks masks = surfaces_to_masks(rect, 4, false);
            return mean(masks.layer_maps);
        });
    }
    return cases;
}

}  // namespace

std::vector<OpCheckResult> run_gradcheck_suite(const std::string& filter, double tol) {
    std::vector<OpCheckResult> results;
    for (const Case& c : build_cases()) {
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        OpCheckResult r;
        r.name = c.name;
        const GradCheckResult g =
            grad_check(c.fn, c.sampler(1000), 1e-5, tol, 1000, c.sampler);
        r.max_rel_err = g.worst;
        r.resamples = g.resamples;
        r.ok = g.ok;
        results.push_back(std::move(r));
    }
    // round_ste backward is an exact identity; check it directly.
    if (filter.empty() || std::string("round_ste").find(filter) != std::string::npos) {
        OpCheckResult r;
        r.name = "round_ste";
        std::vector<Tensor> in = random_inputs({{3, 4}}, 77);
        Tensor proj = random_inputs({{3, 4}}, 78, 0.25, 1.0)[0];
        Tensor out = sum(mul(round_ste(in[0]), proj));
        in[0].zero_grad();
        out.backward();
        double worst = 0.0;
        for (size_t i = 0; i < in[0].grad().size(); ++i) {
            worst = std::max(worst, std::fabs(in[0].grad()[i] - proj.data()[i]));
        }
        r.max_rel_err = worst;
        r.ok = worst == 0.0;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace octseg
