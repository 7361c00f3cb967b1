#include "octseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "octseg/io.hpp"

namespace octseg {

namespace {

constexpr double kPi = std::numbers::pi;

double splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z = z ^ (z >> 31);
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

double normal(std::mt19937_64& rng, double mu, double sigma) {
    std::normal_distribution<double> d(mu, sigma);
    return d(rng);
}

// Compact smooth bump of height h and half-width hw centered at c.
double bump_profile(double i, double c, double hw, double h) {
    const double u = (i - c) / hw;
    const double v = 1.0 - u * u;
    return v > 0.0 ? h * std::pow(v, 1.5) : 0.0;
}

void push_up_cascade(std::vector<std::vector<double>>& pos, int surface, double keep_gap) {
    const int W = static_cast<int>(pos[0].size());
    for (int s = surface - 1; s >= 0; --s) {
        for (int i = 0; i < W; ++i) {
            pos[s][i] = std::min(pos[s][i], pos[s + 1][i] - keep_gap);
        }
    }
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += k[i + radius];
    }
    for (double& v : k) v /= norm;
    return k;
}

std::vector<double> blur_separable(const std::vector<double>& img, int H, int W, double sx,
                                   double sy) {
    const std::vector<double> kx = gaussian_kernel(sx), ky = gaussian_kernel(sy);
    const int rx = static_cast<int>(kx.size()) / 2, ry = static_cast<int>(ky.size()) / 2;
    std::vector<double> tmp(img.size()), out(img.size());
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int t = -rx; t <= rx; ++t) {
                const int cc = std::clamp(c + t, 0, W - 1);
                acc += kx[t + rx] * img[static_cast<size_t>(r) * W + cc];
            }
            tmp[static_cast<size_t>(r) * W + c] = acc;
        }
    }
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int t = -ry; t <= ry; ++t) {
                const int rr = std::clamp(r + t, 0, H - 1);
                acc += ky[t + ry] * tmp[static_cast<size_t>(rr) * W + c];
            }
            out[static_cast<size_t>(r) * W + c] = acc;
        }
    }
    return out;
}

struct Affine {
    // dst = A * src + b, src/dst as (x=col, y=row)
    double a00 = 1, a01 = 0, a10 = 0, a11 = 1, bx = 0, by = 0;

    std::pair<double, double> apply(double x, double y) const {
        return {a00 * x + a01 * y + bx, a10 * x + a11 * y + by};
    }
    Affine inverse() const {
        const double det = a00 * a11 - a01 * a10;
        Affine inv;
        inv.a00 = a11 / det;
        inv.a01 = -a01 / det;
        inv.a10 = -a10 / det;
        inv.a11 = a00 / det;
        inv.bx = -(inv.a00 * bx + inv.a01 * by);
        inv.by = -(inv.a10 * bx + inv.a11 * by);
        return inv;
    }
};

Affine build_affine(const SpatialTransformParams& p, int H, int W) {
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const double ct = std::cos(p.rotation_rad), st = std::sin(p.rotation_rad);
    // A = R * Sh * Sc
    const double sh00 = 1.0, sh01 = p.shear_x, sh10 = p.shear_y, sh11 = 1.0;
    const double m00 = sh00 * p.scale_x, m01 = sh01, m10 = sh10 * p.scale_x, m11 = sh11;
    Affine t;
    t.a00 = ct * m00 - st * m10;
    t.a01 = ct * m01 - st * m11;
    t.a10 = st * m00 + ct * m10;
    t.a11 = st * m01 + ct * m11;
    t.bx = cx + p.translate_x_frac * W - (t.a00 * cx + t.a01 * cy);
    t.by = cy - (t.a10 * cx + t.a11 * cy);
    return t;
}

double bilinear_at(const std::vector<double>& img, int H, int W, double x, double y) {
    if (x < -1.0 || y < -1.0 || x > W || y > H) return 0.0;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto px = [&](int r, int c) -> double {
        if (r < 0 || r >= H || c < 0 || c >= W) return 0.0;
        return img[static_cast<size_t>(r) * W + c];
    };
    return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace

const char* annotation_mode_name(AnnotationMode m) {
    switch (m) {
        case AnnotationMode::kFull: return "full";
        case AnnotationMode::kLayersOnly: return "layers_only";
        case AnnotationMode::kLesionsOnly: return "lesions_only";
        case AnnotationMode::kUnlabeled: return "unlabeled";
    }
    return "?";
}

AnnotationMode annotation_mode_from_name(const std::string& name) {
    if (name == "full") return AnnotationMode::kFull;
    if (name == "layers_only") return AnnotationMode::kLayersOnly;
    if (name == "lesions_only") return AnnotationMode::kLesionsOnly;
    if (name == "unlabeled") return AnnotationMode::kUnlabeled;
    throw std::invalid_argument("unknown annotation mode: " + name);
}

void SceneConfig::validate(const TopologySchema& schema) const {
    const int S = schema.num_surfaces();
    if (static_cast<int>(surface_frac.size()) != S) {
        throw std::invalid_argument("scene: expected " + std::to_string(S) +
                                    " surface fractions");
    }
    if (static_cast<int>(layer_intensity.size()) != S - 1) {
        throw std::invalid_argument("scene: expected " + std::to_string(S - 1) +
                                    " layer intensities");
    }
    if (static_cast<int>(lesion_intensity.size()) != schema.num_lesions()) {
        throw std::invalid_argument("scene: expected " + std::to_string(schema.num_lesions()) +
                                    " lesion intensities");
    }
    for (size_t i = 0; i + 1 < surface_frac.size(); ++i) {
        if (surface_frac[i] >= surface_frac[i + 1]) {
            throw std::invalid_argument("scene: surface fractions must increase with depth");
        }
    }
    std::vector<double> stack;
    stack.push_back(vitreous_intensity);
    stack.insert(stack.end(), layer_intensity.begin(), layer_intensity.end());
    stack.push_back(choroid_intensity);
    for (size_t i = 0; i + 1 < stack.size(); ++i) {
        if (std::fabs(stack[i] - stack[i + 1]) < 0.1) {
            throw std::invalid_argument("scene: adjacent structures need intensity contrast "
                                        ">= 0.1");
        }
    }
}

nlohmann::json SceneConfig::to_json() const {
    nlohmann::json j;
    j["rows"] = rows;
    j["cols"] = cols;
    j["surface_frac"] = surface_frac;
    j["vitreous_intensity"] = vitreous_intensity;
    j["choroid_intensity"] = choroid_intensity;
    j["layer_intensity"] = layer_intensity;
    j["lesion_intensity"] = lesion_intensity;
    j["boundary_wave_px"] = boundary_wave_px;
    j["boundary_tilt_px"] = boundary_tilt_px;
    j["min_gap_px"] = min_gap_px;
    j["lesion_prob"] = lesion_prob;
    j["placement"] = placement == LesionPlacement::kRandom
                         ? "random"
                         : (placement == LesionPlacement::kNone ? "none" : "force");
    j["speckle_sigma"] = speckle_sigma;
    j["axial_um_per_px"] = axial_um_per_px;
    return j;
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
    SceneConfig c;
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    if (j.contains("surface_frac")) c.surface_frac = j["surface_frac"].get<std::vector<double>>();
    c.vitreous_intensity = j.value("vitreous_intensity", c.vitreous_intensity);
    c.choroid_intensity = j.value("choroid_intensity", c.choroid_intensity);
    if (j.contains("layer_intensity")) {
        c.layer_intensity = j["layer_intensity"].get<std::vector<double>>();
    }
    if (j.contains("lesion_intensity")) {
        c.lesion_intensity = j["lesion_intensity"].get<std::vector<double>>();
    }
    c.boundary_wave_px = j.value("boundary_wave_px", c.boundary_wave_px);
    c.boundary_tilt_px = j.value("boundary_tilt_px", c.boundary_tilt_px);
    c.min_gap_px = j.value("min_gap_px", c.min_gap_px);
    c.lesion_prob = j.value("lesion_prob", c.lesion_prob);
    const std::string p = j.value("placement", "random");
    c.placement = p == "none" ? LesionPlacement::kNone
                              : (p == "force" ? LesionPlacement::kForce : LesionPlacement::kRandom);
    c.speckle_sigma = j.value("speckle_sigma", c.speckle_sigma);
    c.axial_um_per_px = j.value("axial_um_per_px", c.axial_um_per_px);
    return c;
}

bool LabeledScan::has_lesion() const {
    for (bool b : lesion_present) {
        if (b) return true;
    }
    return false;
}

std::uint64_t scan_seed(std::uint64_t master_seed, std::uint64_t index) {
    std::uint64_t state = master_seed ^ (0x517cc1b727220a95ull * (index + 1));
    (void)splitmix64(state);
    return state;
}

LabeledScan generate_scan(std::uint64_t seed, const SceneConfig& config,
                          const TopologySchema& schema) {
    config.validate(schema);
    std::mt19937_64 rng(seed);
    const int H = config.rows, W = config.cols;
    const int S = schema.num_surfaces();
    const int K = schema.num_lesions();

    LabeledScan scan;
    scan.seed = seed;
    scan.lesion_present.assign(K, false);

    // Resting geometry: per-surface low-frequency waves plus a shared tilt.
    std::vector<std::vector<double>> pos(S, std::vector<double>(W));
    const double tilt = uniform(rng, -config.boundary_tilt_px, config.boundary_tilt_px);
    for (int s = 0; s < S; ++s) {
        const double a1 = uniform(rng, 0.3, config.boundary_wave_px);
        const double a2 = uniform(rng, 0.1, 0.5 * config.boundary_wave_px);
        const double f1 = uniform(rng, 0.6, 1.4), f2 = uniform(rng, 1.6, 2.6);
        const double ph1 = uniform(rng, 0.0, 2.0 * kPi), ph2 = uniform(rng, 0.0, 2.0 * kPi);
        for (int i = 0; i < W; ++i) {
            pos[s][i] = config.surface_frac[s] * H + tilt * (i - W / 2.0) +
                        a1 * std::sin(2.0 * kPi * f1 * i / W + ph1) +
                        a2 * std::sin(2.0 * kPi * f2 * i / W + ph2);
        }
    }
    for (int s = S - 2; s >= 0; --s) {  // keep the rest pose ordered
        for (int i = 0; i < W; ++i) {
            pos[s][i] = std::min(pos[s][i], pos[s + 1][i] - config.min_gap_px);
        }
    }

    // Lesion draw and placement. Types with several admissible layers grow
    // as blobs that thicken their host layer; single-layer types detach the
    // layer's upper surface, which lifts everything above it.
    struct Placed {
        int type = -1;
        int layer = -1;
        double center = 0, half_width = 0, height = 0;
        bool band = false;  // band under the lift vs inscribed blob
    };
    std::vector<Placed> placed;
    std::vector<bool> want(K, false);
    for (int attempt = 0; attempt < 64; ++attempt) {
        bool any = false;
        for (int k = 0; k < K; ++k) {
            want[k] = config.placement != LesionPlacement::kNone &&
                      uniform(rng, 0.0, 1.0) < config.lesion_prob;
            any = any || want[k];
        }
        if (config.placement != LesionPlacement::kForce || any) break;
    }
    if (config.placement == LesionPlacement::kForce && std::none_of(want.begin(), want.end(),
                                                                    [](bool b) { return b; })) {
        want[K - 1] = true;  // deterministic fallback
    }

    for (int k = 0; k < K; ++k) {
        if (!want[k]) continue;
        const auto& adm = schema.admissible[k];
        const bool band = adm.size() == 1;
        bool ok = false;
        for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
            Placed p;
            p.type = k;
            p.band = band;
            p.layer = adm[static_cast<size_t>(uniform(rng, 0.0, 1.0) * adm.size()) % adm.size()];
            p.center = uniform(rng, 0.18 * W, 0.82 * W);
            p.half_width = uniform(rng, band ? 0.10 * W : 0.07 * W, band ? 0.20 * W : 0.14 * W);
            p.height = band ? uniform(rng, 4.0, 9.0) : uniform(rng, 2.5, 5.5);
            // Tentative deformation on a copy; commit when it stays in frame.
            auto trial = pos;
            if (band) {
                for (int i = 0; i < W; ++i) {
                    trial[p.layer][i] -= bump_profile(i, p.center, p.half_width, p.height);
                }
                push_up_cascade(trial, p.layer, 0.6);
            } else {
                for (int s = p.layer + 1; s < S; ++s) {
                    for (int i = 0; i < W; ++i) {
                        trial[s][i] += bump_profile(i, p.center, p.half_width, p.height);
                    }
                }
            }
            bool in_frame = true;
            for (int s = 0; s < S && in_frame; ++s) {
                for (int i = 0; i < W; ++i) {
                    if (trial[s][i] < 1.5 || trial[s][i] > H - 2.5) {
                        in_frame = false;
                        break;
                    }
                }
            }
            if (in_frame) {
                pos = std::move(trial);
                placed.push_back(p);
                ok = true;
            }
        }
        if (!ok) {
            scan.warnings.push_back("infeasible placement for lesion " + schema.lesion_names[k]);
        }
    }

    // Final ordering cleanup (strict by a small margin).
    for (int s = S - 2; s >= 0; --s) {
        for (int i = 0; i < W; ++i) {
            pos[s][i] = std::min(pos[s][i], pos[s + 1][i] - 0.2);
        }
    }

    // Masks from the final geometry, using the engine's integer-row rule:
    // row r belongs to layer l iff pos[l] <= r < pos[l+1].
    std::vector<double> lesions(static_cast<size_t>(K + 1) * H * W, 0.0);
    for (const Placed& p : placed) {
        long long count = 0;
        for (int i = 0; i < W; ++i) {
            const double bump = bump_profile(i, p.center, p.half_width, p.height);
            const double top = pos[p.layer][i], bot = pos[p.layer + 1][i];
            double r_lo, r_hi;
            if (p.band) {
                if (bump < 0.75) continue;
                r_lo = top;
                r_hi = bot;
            } else {
                if (bump <= 0.0) continue;
                const double u = (i - p.center) / p.half_width;
                const double half_h = 0.42 * (bot - top) * std::sqrt(std::max(0.0, 1.0 - u * u));
                const double cr = 0.5 * (top + bot);
                r_lo = cr - half_h;
                r_hi = cr + half_h;
            }
            for (int r = std::max(0, static_cast<int>(std::ceil(r_lo))); r < H; ++r) {
                if (r >= r_hi || r >= bot) break;
                if (r < top) continue;
                lesions[(static_cast<size_t>(p.type) * H + r) * W + i] = 1.0;
                ++count;
            }
        }
        if (count >= 3) {
            scan.lesion_present[p.type] = true;
        } else if (count > 0) {
            // Too small to count as present; drop the stray pixels.
            for (int r = 0; r < H; ++r) {
                for (int i = 0; i < W; ++i) {
                    lesions[(static_cast<size_t>(p.type) * H + r) * W + i] = 0.0;
                }
            }
            scan.warnings.push_back("lesion " + schema.lesion_names[p.type] +
                                    " below minimum size");
        }
    }
    for (int r = 0; r < H; ++r) {  // background channel
        for (int i = 0; i < W; ++i) {
            double any = 0.0;
            for (int k = 0; k < K; ++k) {
                any = std::max(any, lesions[(static_cast<size_t>(k) * H + r) * W + i]);
            }
            lesions[(static_cast<size_t>(K) * H + r) * W + i] = 1.0 - any;
        }
    }

    // Fill and speckle.
    std::vector<double> img(static_cast<size_t>(H) * W);
    for (int i = 0; i < W; ++i) {
        for (int r = 0; r < H; ++r) {
            double v;
            if (r < pos[0][i]) {
                v = config.vitreous_intensity;
            } else if (r >= pos[S - 1][i]) {
                v = config.choroid_intensity;
            } else {
                v = config.layer_intensity.back();
                for (int s = 0; s + 1 < S; ++s) {
                    if (r >= pos[s][i] && r < pos[s + 1][i]) {
                        v = config.layer_intensity[s];
                        break;
                    }
                }
            }
            for (int k = 0; k < K; ++k) {
                if (lesions[(static_cast<size_t>(k) * H + r) * W + i] > 0.5) {
                    v = config.lesion_intensity[k];
                }
            }
            img[static_cast<size_t>(r) * W + i] = v;
        }
    }
    for (double& v : img) {
        v = std::clamp(v * (1.0 + normal(rng, 0.0, config.speckle_sigma)), 0.0, 1.0);
    }

    std::vector<double> bflat(static_cast<size_t>(S) * W);
    for (int s = 0; s < S; ++s) {
        std::copy(pos[s].begin(), pos[s].end(), bflat.begin() + static_cast<size_t>(s) * W);
    }
    scan.image = Tensor::from_data({H, W}, std::move(img));
    scan.gt_boundaries = Tensor::from_data({S, W}, std::move(bflat));
    scan.gt_lesions = Tensor::from_data({K + 1, H, W}, std::move(lesions));
    return scan;
}

SpatialTransformParams sample_spatial_params(std::mt19937_64& rng) {
    SpatialTransformParams p;
    p.rotation_rad = uniform(rng, -0.2, 0.2);
    p.shear_x = uniform(rng, -0.2, 0.2);
    p.shear_y = uniform(rng, -0.2, 0.2);
    p.translate_x_frac = uniform(rng, -0.3, 0.3);
    p.scale_x = 1.0 + uniform(rng, -0.1, 0.1);
    return p;
}

LabeledScan apply_spatial_transform(const LabeledScan& scan, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return apply_spatial_transform(scan, sample_spatial_params(rng));
}

LabeledScan apply_spatial_transform(const LabeledScan& scan, const SpatialTransformParams& p) {
    const int H = scan.rows(), W = scan.cols();
    const int S = scan.gt_boundaries.shape()[0];
    const int KB = scan.gt_lesions.shape()[0];
    const Affine fwd = build_affine(p, H, W);
    const Affine inv = fwd.inverse();

    LabeledScan out = scan;
    out.warnings = scan.warnings;

    std::vector<double> img(static_cast<size_t>(H) * W);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const auto [sx, sy] = inv.apply(c, r);
            img[static_cast<size_t>(r) * W + c] = bilinear_at(scan.image.data(), H, W, sx, sy);
        }
    }
    out.image = Tensor::from_data({H, W}, std::move(img));

    std::vector<double> les(static_cast<size_t>(KB) * H * W, 0.0);
    for (int k = 0; k + 1 < KB; ++k) {  // background recomputed below
        const double* src = &scan.gt_lesions.data()[static_cast<size_t>(k) * H * W];
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const auto [sx, sy] = inv.apply(c, r);
                const int rc = static_cast<int>(std::lround(sy));
                const int cc = static_cast<int>(std::lround(sx));
                if (rc < 0 || rc >= H || cc < 0 || cc >= W) continue;
                les[(static_cast<size_t>(k) * H + r) * W + c] =
                    src[static_cast<size_t>(rc) * W + cc];
            }
        }
    }
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double any = 0.0;
            for (int k = 0; k + 1 < KB; ++k) {
                any = std::max(any, les[(static_cast<size_t>(k) * H + r) * W + c]);
            }
            les[(static_cast<size_t>(KB - 1) * H + r) * W + c] = 1.0 - any;
        }
    }
    out.gt_lesions = Tensor::from_data({KB, H, W}, std::move(les));

    // Boundaries map analytically; each transformed polyline is resampled
    // at integer columns.
    std::vector<double> bounds(static_cast<size_t>(S) * W);
    for (int s = 0; s < S; ++s) {
        std::vector<std::pair<double, double>> pts(W);
        for (int i = 0; i < W; ++i) {
            pts[i] = fwd.apply(i, scan.gt_boundaries.data()[static_cast<size_t>(s) * W + i]);
        }
        std::sort(pts.begin(), pts.end());
        for (int c = 0; c < W; ++c) {
            double y;
            if (c <= pts.front().first) {
                y = pts.front().second;
            } else if (c >= pts.back().first) {
                y = pts.back().second;
            } else {
                size_t j = 1;
                while (j < pts.size() && pts[j].first < c) ++j;
                const auto& [x0, y0] = pts[j - 1];
                const auto& [x1, y1] = pts[j];
                const double t = x1 > x0 ? (c - x0) / (x1 - x0) : 0.0;
                y = y0 + t * (y1 - y0);
            }
            bounds[static_cast<size_t>(s) * W + c] = std::clamp(y, 0.0, H - 1.0);
        }
    }
    for (int s = S - 2; s >= 0; --s) {  // restore strict ordering if clamping merged rows
        for (int c = 0; c < W; ++c) {
            bounds[static_cast<size_t>(s) * W + c] =
                std::min(bounds[static_cast<size_t>(s) * W + c],
                         bounds[static_cast<size_t>(s + 1) * W + c]);
        }
    }
    out.gt_boundaries = Tensor::from_data({S, W}, std::move(bounds));
    return out;
}

LabeledScan apply_style_transform(const LabeledScan& scan, std::uint64_t seed,
                                  bool force_nonidentity) {
    std::mt19937_64 rng(seed);
    const int H = scan.rows(), W = scan.cols();
    std::vector<double> img = scan.image.data();

    for (int round = 0; round < 64; ++round) {
        const bool noise = uniform(rng, 0.0, 1.0) < 0.1;
        const bool rician = uniform(rng, 0.0, 1.0) < 0.1;
        const bool smooth = uniform(rng, 0.0, 1.0) < 0.1;
        const bool sharpen = uniform(rng, 0.0, 1.0) < 0.1;
        if (!(noise || rician || smooth || sharpen)) {
            if (force_nonidentity) continue;
            break;
        }
        if (noise) {
            for (double& v : img) v += normal(rng, 0.0, 0.1);
        }
        if (rician) {
            // Desk-scale sigma for [0,1] intensities.
            for (double& v : img) {
                const double x = v + normal(rng, 0.0, 0.1);
                const double y = normal(rng, 0.0, 0.1);
                v = std::sqrt(x * x + y * y);
            }
        }
        if (smooth) {
            const double sx = uniform(rng, 0.25, 1.5), sy = uniform(rng, 0.25, 1.5);
            img = blur_separable(img, H, W, sx, sy);
        }
        if (sharpen) {
            const double sx = uniform(rng, 0.5, 1.0), sy = uniform(rng, 0.5, 1.0);
            const std::vector<double> blurred = blur_separable(img, H, W, sx, sy);
            for (size_t i = 0; i < img.size(); ++i) img[i] += img[i] - blurred[i];
        }
        break;
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);

    LabeledScan out = scan;
    out.image = Tensor::from_data({H, W}, std::move(img));
    return out;
}

void save_scan(const std::filesystem::path& dir, const LabeledScan& scan,
               const TopologySchema& schema) {
    std::filesystem::create_directories(dir);
    const int H = scan.rows(), W = scan.cols();
    GrayImage img;
    img.rows = H;
    img.cols = W;
    img.pixels = scan.image.data();
    write_pgm16(dir / "image.pgm", img);
    write_boundary_csv(dir / "boundaries.csv", scan.gt_boundaries);
    for (int k = 0; k < schema.num_lesions(); ++k) {
        GrayImage mk;
        mk.rows = H;
        mk.cols = W;
        mk.pixels.assign(scan.gt_lesions.data().begin() + static_cast<size_t>(k) * H * W,
                         scan.gt_lesions.data().begin() + static_cast<size_t>(k + 1) * H * W);
        write_pgm8(dir / ("lesion_" + schema.lesion_names[k] + ".pgm"), mk);
    }
    nlohmann::json meta;
    meta["mode"] = annotation_mode_name(scan.mode);
    meta["seed"] = scan.seed;
    meta["schema"] = schema.name;
    meta["lesion_present"] = scan.lesion_present;
    meta["warnings"] = scan.warnings;
    write_json(dir / "meta.json", meta);
}

LabeledScan load_scan(const std::filesystem::path& dir, const TopologySchema& schema) {
    LabeledScan scan;
    const GrayImage img = read_pgm(dir / "image.pgm");
    const int H = img.rows, W = img.cols;
    scan.image = Tensor::from_data({H, W}, img.pixels);
    scan.gt_boundaries = read_boundary_csv(dir / "boundaries.csv");
    const int K = schema.num_lesions();
    std::vector<double> les(static_cast<size_t>(K + 1) * H * W, 0.0);
    for (int k = 0; k < K; ++k) {
        const GrayImage mk = read_pgm(dir / ("lesion_" + schema.lesion_names[k] + ".pgm"));
        for (size_t i = 0; i < mk.pixels.size(); ++i) {
            les[static_cast<size_t>(k) * H * W + i] = mk.pixels[i] > 0.5 ? 1.0 : 0.0;
        }
    }
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double any = 0.0;
            for (int k = 0; k < K; ++k) {
                any = std::max(any, les[(static_cast<size_t>(k) * H + r) * W + c]);
            }
            les[(static_cast<size_t>(K) * H + r) * W + c] = 1.0 - any;
        }
    }
    scan.gt_lesions = Tensor::from_data({K + 1, H, W}, std::move(les));
    const nlohmann::json meta = read_json(dir / "meta.json");
    scan.mode = annotation_mode_from_name(meta.at("mode").get<std::string>());
    scan.seed = meta.at("seed").get<std::uint64_t>();
    scan.lesion_present = meta.at("lesion_present").get<std::vector<bool>>();
    scan.warnings = meta.at("warnings").get<std::vector<std::string>>();
    return scan;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    ds.schema.save(dir / "schema.json");
    write_json(dir / "scene.json", ds.config.to_json());
    char name[32];
    for (size_t i = 0; i < ds.scans.size(); ++i) {
        std::snprintf(name, sizeof(name), "scan_%05zu", i);
        save_scan(dir / name, ds.scans[i], ds.schema);
    }
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.schema = TopologySchema::load(dir / "schema.json");
    ds.config = SceneConfig::from_json(read_json(dir / "scene.json"));
    std::vector<std::filesystem::path> scan_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("scan_", 0) == 0) {
            scan_dirs.push_back(entry.path());
        }
    }
    std::sort(scan_dirs.begin(), scan_dirs.end());
    for (const auto& sd : scan_dirs) ds.scans.push_back(load_scan(sd, ds.schema));
    return ds;
}

Dataset make_dataset(std::uint64_t master_seed, int count, const SceneConfig& config,
                     const TopologySchema& schema) {
    Dataset ds;
    ds.schema = schema;
    ds.config = config;
    ds.scans.reserve(count);
    for (int i = 0; i < count; ++i) {
        ds.scans.push_back(generate_scan(scan_seed(master_seed, i), config, schema));
    }
    return ds;
}

}  // namespace octseg
