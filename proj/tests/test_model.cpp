#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "octseg/losses.hpp"
#include "octseg/model.hpp"
#include "octseg/synthdata.hpp"

using namespace octseg;

namespace {

AnatomyNetConfig small_config() {
    AnatomyNetConfig cfg;
    cfg.rows = 16;
    cfg.cols = 16;
    cfg.widths = {4, 8};
    cfg.style_dim = 4;
    cfg.film_width = 4;
    return cfg;
}

const TopologySchema kSchema = TopologySchema::default_synthetic();

}  // namespace

TEST_CASE("forward produces contract shapes and normalized heads") {
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 1);
    Tensor image = Tensor::full({16, 16}, 0.5);
    const ModelOutputs out = model.forward(image, kSchema);

    CHECK(out.probs.values.shape() == Shape{5, 16, 16});
    CHECK(out.lesions_soft.values.shape() == Shape{4, 16, 16});
    // Boundary columns sum to 1 within 1e-6.
    for (int s = 0; s < 5; ++s) {
        for (int i = 0; i < 16; ++i) {
            double total = 0.0;
            for (int r = 0; r < 16; ++r) total += out.probs.values.at({s, r, i});
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    // Lesion channels softmax to 1 per pixel; binarized values are 0/1.
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            double total = 0.0;
            for (int k = 0; k < 4; ++k) total += out.lesions_soft.values.at({k, r, c});
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    for (double v : out.lesions_bin.values.data()) CHECK((v == 0.0 || v == 1.0));
    CHECK(out.spatial_factors.shape() == Shape{4 + 4, 16, 16});
    CHECK(count_ordering_violations(out.rect_positions) == 0);
}

TEST_CASE("config validation rejects indivisible sizes") {
    AnatomyNetConfig cfg = small_config();
    cfg.rows = 18;  // not divisible by 2^(stages-1)
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("style encoder is deterministic per seed and responds to noise") {
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 5);
    SceneConfig scfg;
    scfg.rows = 16;
    scfg.cols = 16;
    scfg.surface_frac = {0.2, 0.35, 0.5, 0.65, 0.8};
    const LabeledScan scan = generate_scan(4, scfg, kSchema);
    const ModelOutputs out = model.forward(scan.image, kSchema);

    std::mt19937_64 rng_a(33), rng_b(33), rng_c(44);
    const StyleFactors a = model.encode_style(scan.image, out.spatial_factors, true, rng_a);
    const StyleFactors b = model.encode_style(scan.image, out.spatial_factors, true, rng_b);
    const StyleFactors c = model.encode_style(scan.image, out.spatial_factors, true, rng_c);
    CHECK(std::memcmp(a.omega.data().data(), b.omega.data().data(),
                      sizeof(double) * a.omega.data().size()) == 0);
    // Different noise draw, same mu.
    CHECK(a.mu.data() == c.mu.data());
    bool differs = false;
    for (size_t i = 0; i < a.omega.data().size(); ++i) {
        differs = differs || a.omega.data()[i] != c.omega.data()[i];
    }
    CHECK(differs);

    // Same content, different speckle -> different omega (no collapse).
    SceneConfig scfg2 = scfg;
    const LabeledScan scan2 = [&] {
        LabeledScan s = generate_scan(4, scfg2, kSchema);
        std::vector<double> img = s.image.data();
        std::mt19937_64 noise_rng(9);
        std::normal_distribution<double> d(0.0, 0.05);
        for (double& v : img) v = std::clamp(v + d(noise_rng), 0.0, 1.0);
        s.image = Tensor::from_data({16, 16}, std::move(img));
        return s;
    }();
    std::mt19937_64 rng_d(33);
    const StyleFactors e = model.encode_style(scan2.image, out.spatial_factors, false, rng_d);
    const StyleFactors f = model.encode_style(scan.image, out.spatial_factors, false, rng_d);
    const double cos = cosine_similarity(e.mu, f.mu).value();
    CHECK(cos < 1.0 - 1e-6);
}

TEST_CASE("decoder support is set by the factors alone") {
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 2);
    // Factor stack supported in a small box.
    const int C = (cfg.num_surfaces - 1) + (cfg.num_lesions + 1);
    std::vector<double> f(static_cast<size_t>(C) * 16 * 16, 0.0);
    for (int ch = 0; ch < C; ++ch) {
        for (int r = 5; r < 9; ++r) {
            for (int c = 6; c < 10; ++c) f[(static_cast<size_t>(ch) * 16 + r) * 16 + c] = 1.0;
        }
    }
    Tensor factors = Tensor::from_data({C, 16, 16}, std::move(f));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> o1(static_cast<size_t>(cfg.style_dim)), o2 = o1;
    for (double& v : o1) v = d(rng);
    for (double& v : o2) v = d(rng);
    // Give the FiLM projections nonzero weights so omega actually acts.
    for (int i = 0; i < 4; ++i) {
        Tensor w = model.params().find("film.fc" + std::to_string(i) + ".w");
        std::mt19937_64 wrng(10 + i);
        std::normal_distribution<double> nd(0.0, 0.3);
        for (double& v : w.mutable_data()) v = nd(wrng);
    }
    Tensor r1 = model.decode(factors, Tensor::from_data({1, cfg.style_dim}, o1));
    Tensor r2 = model.decode(factors, Tensor::from_data({1, cfg.style_dim}, o2));
    // Outside the 4-stage convolution halo both outputs are exactly zero.
    const int halo = 4;
    bool changed_inside = false;
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            const bool in_halo = r >= 5 - halo && r < 9 + halo && c >= 6 - halo && c < 10 + halo;
            if (!in_halo) {
                CHECK(r1.at({r, c}) == 0.0);
                CHECK(r2.at({r, c}) == 0.0);
            } else if (r1.at({r, c}) != r2.at({r, c})) {
                changed_inside = true;
            }
        }
    }
    CHECK(changed_inside);
}

TEST_CASE("zero FiLM projections with summing convs reproduce the factor sum") {
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 3);
    const int C = (cfg.num_surfaces - 1) + (cfg.num_lesions + 1);
    // Identity construction: first conv sums all input channels into
    // channel 0, middle convs pass channel 0 through, last maps it out.
    auto set_center = [&](const std::string& name, int out_ch, int in_ch,
                          const std::function<double(int, int)>& tap) {
        Tensor w = model.params().find(name);
        std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
        for (int o = 0; o < out_ch; ++o) {
            for (int i = 0; i < in_ch; ++i) {
                const double v = tap(o, i);
                if (v != 0.0) {
                    // center tap of a 3x3 kernel
                    w.mutable_data()[((static_cast<size_t>(o) * in_ch + i) * 3 + 1) * 3 + 1] = v;
                }
            }
        }
    };
    set_center("film.conv0.w", cfg.film_width, C,
               [](int o, int) { return o == 0 ? 1.0 : 0.0; });
    set_center("film.conv1.w", cfg.film_width, cfg.film_width,
               [](int o, int i) { return (o == 0 && i == 0) ? 1.0 : 0.0; });
    set_center("film.conv2.w", cfg.film_width, cfg.film_width,
               [](int o, int i) { return (o == 0 && i == 0) ? 1.0 : 0.0; });
    set_center("film.conv3.w", 1, cfg.film_width, [](int, int i) { return i == 0 ? 1.0 : 0.0; });

    std::vector<double> f(static_cast<size_t>(C) * 16 * 16, 0.0);
    for (int ch = 0; ch < C; ++ch) {
        for (int r = 4; r < 12; ++r) {
            for (int c = 4; c < 12; ++c) {
                f[(static_cast<size_t>(ch) * 16 + r) * 16 + c] = (ch % 2 == 0) ? 0.5 : 0.25;
            }
        }
    }
    Tensor factors = Tensor::from_data({C, 16, 16}, f);
    Tensor out = model.decode(factors, Tensor::zeros({1, cfg.style_dim}));
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            double expect = 0.0;
            for (int ch = 0; ch < C; ++ch) expect += f[(static_cast<size_t>(ch) * 16 + r) * 16 + c];
            CHECK(out.at({r, c}) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("end-to-end backward produces finite gradients everywhere") {
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 7);
    SceneConfig scfg;
    scfg.rows = 16;
    scfg.cols = 16;
    scfg.surface_frac = {0.2, 0.35, 0.5, 0.65, 0.8};
    const LabeledScan scan = generate_scan(21, scfg, kSchema);
    const ModelOutputs out = model.forward(scan.image, kSchema);
    std::mt19937_64 rng(3);
    const StyleFactors style = model.encode_style(scan.image, out.spatial_factors, true, rng);
    const Tensor recon = model.decode(out.spatial_factors, style.omega);

    Tensor total = add(mean(recon), add(mean(out.lesions_corrected.values),
                                        mean(out.rect_positions.positions)));
    model.params().zero_grad();
    total.backward();
    for (const auto& [name, t] : model.params().all()) {
        REQUIRE(t.has_grad());
        for (double g : t.grad()) {
            REQUIRE(std::isfinite(g));
        }
    }
}

TEST_CASE("gradients from loss_lp reach the boundary head") {
    AnatomyNetConfig cfg = small_config();
    cfg.rows = 8;
    cfg.cols = 8;
    cfg.widths = {4};
    Model model(cfg, 11);
    // Violating configuration: bias the PED channel so it binarizes to 1
    // everywhere, far outside its admissible band.
    Tensor bias = model.params().find("anatomy.head_l.b");
    bias.mutable_data()[2] = 8.0;
    SceneConfig scfg;
    scfg.rows = 8;
    scfg.cols = 8;
    scfg.surface_frac = {0.15, 0.3, 0.5, 0.7, 0.85};
    scfg.boundary_wave_px = 0.3;
    scfg.placement = LesionPlacement::kNone;
    const LabeledScan scan = generate_scan(2, scfg, kSchema);
    const ModelOutputs out = model.forward(scan.image, kSchema);
    REQUIRE(out.lesions_bin.values.at({2, 0, 0}) == 1.0);
    Tensor lp = loss_lp(out.lesions_bin, out.layers, kSchema);
    CHECK(lp.value() > 1.0);  // hard violations present
    model.params().zero_grad();
    lp.backward();
    const Tensor head = model.params().find("anatomy.head_b.w");
    double norm = 0.0;
    if (head.has_grad()) {
        for (double g : head.grad()) norm += std::fabs(g);
    }
    // The penalty must reach conv-b through the layer maps.
    CHECK(norm > 0.0);
}

TEST_CASE("checkpoint save/load round trip validates the header") {
    namespace fs = std::filesystem;
    AnatomyNetConfig cfg = small_config();
    Model model(cfg, 13);
    const fs::path path = fs::temp_directory_path() / "octseg_test.ckpt";
    model.save_checkpoint(path, 13, 321);

    Model back = Model::load_checkpoint(path);
    CHECK(back.config().rows == cfg.rows);
    for (size_t i = 0; i < model.params().all().size(); ++i) {
        const auto& [name, t] = model.params().all()[i];
        const auto& [name2, t2] = back.params().all()[i];
        CHECK(name == name2);
        REQUIRE(t.data().size() == t2.data().size());
        CHECK(std::memcmp(t.data().data(), t2.data().data(),
                          sizeof(double) * t.data().size()) == 0);
    }
    const nlohmann::json header = Model::peek_header(path);
    CHECK(header.at("step").get<long long>() == 321);

    // Corrupt the header config: loader must reject.
    std::ifstream is(path, std::ios::binary);
    std::string line;
    std::getline(is, line);
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    nlohmann::json bad = nlohmann::json::parse(line);
    bad["params"][0]["shape"] = {1, 1, 1, 1};
    const fs::path bad_path = fs::temp_directory_path() / "octseg_bad.ckpt";
    std::ofstream os(bad_path, std::ios::binary);
    os << bad.dump() << "\n" << rest;
    os.close();
    CHECK_THROWS(Model::load_checkpoint(bad_path));
    fs::remove(path);
    fs::remove(bad_path);
}

TEST_CASE("gradient clipping bounds the global norm") {
    std::mt19937_64 rng(1);
    ParamStore store;
    Tensor a = store.create("a", {4}, 1.0, rng);
    Tensor loss = mul_scalar(sum(mul(a, a)), 50.0);
    store.zero_grad();
    loss.backward();
    CHECK(store.grad_norm() > 2.0);
    store.clip_grad_norm(2.0);
    CHECK(store.grad_norm() == doctest::Approx(2.0).epsilon(1e-9));
}
