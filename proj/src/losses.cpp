#include "octseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace octseg {

GaussianBoundaryTarget make_gaussian_target(const BoundarySet& reference, int rows,
                                            double sigma) {
    const int S = reference.num_surfaces(), W = reference.cols();
    const auto& mu = reference.positions.data();
    std::vector<double> t(static_cast<size_t>(S) * rows * W, 0.0);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int s = 0; s < S; ++s) {
        for (int i = 0; i < W; ++i) {
            const double m = mu[static_cast<size_t>(s) * W + i];
            double norm = 0.0;
            for (int r = 0; r < rows; ++r) {
                const double d = r - m;
                const double v = std::exp(-d * d * inv2s2);
                t[(static_cast<size_t>(s) * rows + r) * W + i] = v;
                norm += v;
            }
            for (int r = 0; r < rows; ++r) {
                t[(static_cast<size_t>(s) * rows + r) * W + i] /= norm;
            }
        }
    }
    return GaussianBoundaryTarget{Tensor::from_data({S, rows, W}, std::move(t)), sigma};
}

nlohmann::json CurvatureBounds::to_json(const std::vector<std::string>& surface_names) const {
    nlohmann::json j;
    j["delta"] = delta;
    nlohmann::json k = nlohmann::json::object();
    for (size_t s = 0; s < kappa.size(); ++s) k[surface_names.at(s)] = kappa[s];
    j["kappa"] = k;
    return j;
}

CurvatureBounds CurvatureBounds::from_json(const nlohmann::json& j,
                                           const std::vector<std::string>& surface_names) {
    CurvatureBounds b;
    b.delta = j.at("delta").get<int>();
    for (const std::string& name : surface_names) {
        b.kappa.push_back(j.at("kappa").at(name).get<double>());
    }
    return b;
}

void CurvatureBounds::save(const std::filesystem::path& path,
                           const std::vector<std::string>& surface_names) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("curvature bounds: cannot write " + path.string());
    out << to_json(surface_names).dump(2) << "\n";
}

CurvatureBounds CurvatureBounds::load(const std::filesystem::path& path,
                                      const std::vector<std::string>& surface_names) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("curvature bounds: cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j, surface_names);
}

CurvatureBounds estimate_kappa(const std::vector<BoundarySet>& references, int delta,
                               const std::vector<std::string>& surface_names,
                               double quantile) {
    const int S = static_cast<int>(surface_names.size());
    CurvatureBounds bounds;
    bounds.delta = delta;
    const int h = delta / 2;
    for (int s = 0; s < S; ++s) {
        std::vector<double> samples;
        for (const BoundarySet& set : references) {
            if (set.num_surfaces() <= s) continue;
            const int W = set.cols();
            const auto& p = set.positions.data();
            for (int i = h; i + h < W; ++i) {
                const double second = -p[static_cast<size_t>(s) * W + i - h] +
                                      2.0 * p[static_cast<size_t>(s) * W + i] -
                                      p[static_cast<size_t>(s) * W + i + h];
                samples.push_back(std::fabs(second) / delta);
            }
        }
        if (samples.empty()) {
            throw std::invalid_argument("estimate_kappa: no annotated scans for surface " +
                                        surface_names[s]);
        }
        std::sort(samples.begin(), samples.end());
        const double pos = quantile * (samples.size() - 1);
        const size_t lo = static_cast<size_t>(std::floor(pos));
        const size_t hi = std::min(lo + 1, samples.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        bounds.kappa.push_back(samples[lo] + frac * (samples[hi] - samples[lo]));
    }
    return bounds;
}

Tensor loss_to(const BoundarySet& raw) {
    const int S = raw.num_surfaces();
    const double W = raw.cols();
    Tensor upper = slice(raw.positions, 0, 0, S - 1);
    Tensor lower = slice(raw.positions, 0, 1, S - 1);
    return mul_scalar(sum(relu(sub(upper, lower))), 1.0 / W);
}

Tensor loss_bc(const BoundarySet& raw, const CurvatureBounds& bounds) {
    const int S = raw.num_surfaces();
    const int W = raw.cols();
    const int delta = bounds.delta;
    const int h = delta / 2;
    if (W <= delta) {
        throw std::invalid_argument("loss_bc: width " + std::to_string(W) +
                                    " must exceed delta " + std::to_string(delta));
    }
    if (static_cast<int>(bounds.kappa.size()) != S) {
        throw std::invalid_argument("loss_bc: expected " + std::to_string(S) +
                                    " kappa values, got " + std::to_string(bounds.kappa.size()));
    }
    const int valid = W - 2 * h;
    Tensor left = slice(raw.positions, 1, 0, valid);
    Tensor center = slice(raw.positions, 1, h, valid);
    Tensor right = slice(raw.positions, 1, 2 * h, valid);
    Tensor second = mul_scalar(abs(sub(mul_scalar(center, 2.0), add(left, right))),
                               1.0 / static_cast<double>(delta));
    Tensor kappa = reshape(Tensor::from_data({S}, std::vector<double>(bounds.kappa)), {S, 1});
    return mul_scalar(sum(relu(sub(second, kappa))), 1.0 / static_cast<double>(W));
}

Tensor loss_lp(const LesionMasks& raw_lesions, const LayerMasks& layers,
               const TopologySchema& schema, double eps) {
    const int K = raw_lesions.num_lesions();
    const int H = raw_lesions.values.shape()[1];
    const int W = raw_lesions.values.shape()[2];
    if (layers.layer_maps.shape()[1] != H || layers.layer_maps.shape()[2] != W) {
        throw std::invalid_argument("loss_lp: lesion/layer shape mismatch " +
                                    shape_str(raw_lesions.values.shape()) + " vs " +
                                    shape_str(layers.layer_maps.shape()));
    }
    Tensor total;
    for (int k = 0; k < K; ++k) {
        const int idx = schema.lesion_index(raw_lesions.names.at(k));
        if (idx < 0) {
            throw std::invalid_argument("loss_lp: lesion '" + raw_lesions.names[k] +
                                        "' absent from schema " + schema.name);
        }
        Tensor band;
        for (int l : schema.admissible[idx]) {
            Tensor m = slice(layers.layer_maps, 0, l, 1);
            band = band.defined() ? add(band, m) : m;
        }
        Tensor lk = slice(raw_lesions.values, 0, k, 1);
        Tensor arg = sub(Tensor::full({1}, 1.0), mul(lk, sub(Tensor::full({1}, 1.0), band)));
        // Floor the log argument at eps without flattening the gradient:
        // -log((arg + eps)/(1 + eps)) is exactly 0 at arg = 1 and keeps a
        // slope at hard violations, where arg reaches 0 with binary masks.
        Tensor per_pixel = sub(Tensor::full({1}, std::log1p(eps)), log(add_scalar(arg, eps)));
        Tensor term = sum(per_pixel);
        total = total.defined() ? add(total, term) : term;
    }
    if (!total.defined()) total = Tensor::scalar(0.0);
    return mul_scalar(total, 1.0 / (static_cast<double>(W) * H));
}

Tensor loss_kl_boundary(const BoundaryProbMap& probs, const GaussianBoundaryTarget& target) {
    if (probs.values.shape() != target.values.shape()) {
        throw std::invalid_argument("loss_kl_boundary: shape mismatch " +
                                    shape_str(probs.values.shape()) + " vs " +
                                    shape_str(target.values.shape()));
    }
    // T log(T/P) with the T = 0 terms contributing exactly zero via the
    // outer multiplication by T.
    const Tensor& t = target.values;
    Tensor log_ratio = sub(log(clamp(t, 1e-12, 1.0)), log(clamp(probs.values, 1e-12, 1.0)));
    return sum(mul(t, log_ratio));
}

Tensor loss_l1_boundary(const BoundarySet& pred, const BoundarySet& reference, bool squared) {
    if (pred.positions.shape() != reference.positions.shape()) {
        throw std::invalid_argument("loss_l1_boundary: shape mismatch " +
                                    shape_str(pred.positions.shape()) + " vs " +
                                    shape_str(reference.positions.shape()));
    }
    Tensor diff = sub(pred.positions, reference.positions);
    return squared ? mean(square(diff)) : mean(abs(diff));
}

Tensor dice_loss_masks(const Tensor& a, const Tensor& b, double smooth) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("dice: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    Tensor inter = sum(mul(a, b));
    Tensor denom = add(sum(a), sum(b));
    Tensor dice = div(add_scalar(mul_scalar(inter, 2.0), smooth), add_scalar(denom, smooth));
    return sub(Tensor::full({1}, 1.0), dice);
}

Tensor loss_dice(const LesionMasks& pred, const LesionMasks& reference, double smooth) {
    const int K = pred.num_lesions();
    if (reference.num_lesions() != K) {
        throw std::invalid_argument("loss_dice: lesion channel mismatch " +
                                    shape_str(pred.values.shape()) + " vs " +
                                    shape_str(reference.values.shape()));
    }
    Tensor total;
    for (int k = 0; k < K; ++k) {
        Tensor term = dice_loss_masks(slice(pred.values, 0, k, 1),
                                      slice(reference.values, 0, k, 1), smooth);
        total = total.defined() ? add(total, term) : term;
    }
    return mul_scalar(total, 1.0 / K);
}

RecLossResult loss_rec(const Tensor& original, const Tensor& reconstruction,
                       const LayerMasks& layers) {
    if (original.shape() != reconstruction.shape()) {
        throw std::invalid_argument("loss_rec: shape mismatch " + shape_str(original.shape()) +
                                    " vs " + shape_str(reconstruction.shape()));
    }
    const Tensor& c = layers.surface_maps;
    const int S = c.shape()[0], H = c.shape()[1], W = c.shape()[2];
    // Retina band between ILM and BM, taken as data.
    std::vector<double> region(static_cast<size_t>(H) * W);
    double count = 0.0;
    for (int r = 0; r < H; ++r) {
        for (int i = 0; i < W; ++i) {
            const double top = c.data()[static_cast<size_t>(r) * W + i];
            const double bot = c.data()[(static_cast<size_t>(S - 1) * H + r) * W + i];
            const double v = std::round(top) - std::round(bot);
            region[static_cast<size_t>(r) * W + i] = v;
            count += v;
        }
    }
    if (count == 0.0) {
        return RecLossResult{Tensor::scalar(0.0), true};
    }
    Tensor mask = reshape(Tensor::from_data({H, W}, std::move(region)), original.shape());
    Tensor err = sum(mul(abs(sub(original, reconstruction)), mask));
    return RecLossResult{mul_scalar(err, 1.0 / count), false};
}

Tensor loss_zkl(const Tensor& mu, const Tensor& logvar) {
    if (mu.shape() != logvar.shape()) {
        throw std::invalid_argument("loss_zkl: shape mismatch " + shape_str(mu.shape()) +
                                    " vs " + shape_str(logvar.shape()));
    }
    Tensor var = exp(logvar);
    Tensor term = sub(sub(add(square(mu), var), Tensor::full({1}, 1.0)), logvar);
    return mul_scalar(mean(term), 0.5);
}

Tensor loss_triplet_style(const Tensor& omega_i, const Tensor& omega_a, const Tensor& omega_s,
                          bool literal_form) {
    Tensor sim_a = cosine_similarity(omega_i, omega_a);
    Tensor sim_s = cosine_similarity(omega_i, omega_s);
    return literal_form ? relu(sub(sim_a, sim_s)) : relu(sub(sim_s, sim_a));
}

Tensor loss_triplet_anatomy(const BoundarySet& p_i, const BoundarySet& p_a,
                            const BoundarySet& p_s, const LesionMasks& l_i,
                            const LesionMasks& l_a, const LesionMasks& l_s) {
    Tensor mse_s = mse(p_i.positions, p_s.positions);
    Tensor mse_a = mse(p_i.positions, p_a.positions);
    Tensor dl_s = dice_loss_masks(l_i.values, l_s.values);
    Tensor dl_a = dice_loss_masks(l_i.values, l_a.values);
    return add(relu(sub(mse_s, mse_a)), relu(sub(dl_s, dl_a)));
}

}  // namespace octseg
