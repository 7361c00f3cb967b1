#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/tensor.hpp"
#include "octseg/topology.hpp"

namespace octseg {

/// Per-column Gaussian target distribution over rows, built from reference
/// positions; each column renormalized after discretization at integer rows.
struct GaussianBoundaryTarget {
    Tensor values;  // (S, H, W)
    double sigma = 0.5;
};

GaussianBoundaryTarget make_gaussian_target(const BoundarySet& reference, int rows,
                                            double sigma = 0.5);

/// Maximum expected curvature per surface for columns delta pixels apart.
struct CurvatureBounds {
    std::vector<double> kappa;  // per surface
    int delta = 15;

    nlohmann::json to_json(const std::vector<std::string>& surface_names) const;
    static CurvatureBounds from_json(const nlohmann::json& j,
                                     const std::vector<std::string>& surface_names);
    void save(const std::filesystem::path& path,
              const std::vector<std::string>& surface_names) const;
    static CurvatureBounds load(const std::filesystem::path& path,
                                const std::vector<std::string>& surface_names);
};

/// 0.999 quantile (linear interpolation between order statistics) of the
/// per-column second differences |p[i-h] - 2 p[i] + p[i+h]| / delta over all
/// reference scans, per surface. Rejects when no scans are given.
CurvatureBounds estimate_kappa(const std::vector<BoundarySet>& references, int delta,
                               const std::vector<std::string>& surface_names,
                               double quantile = 0.999);

// ---- anatomical prior losses (raw head outputs) ----

/// Mean-over-width sum of positive ordering violations of the raw positions.
Tensor loss_to(const BoundarySet& raw);

/// Hinge on second differences exceeding kappa, averaged over width.
Tensor loss_bc(const BoundarySet& raw, const CurvatureBounds& bounds);

/// -log(1 - L^k (1 - sum of admissible layer maps)) / (W*H), with the log
/// argument floored at `eps` in a slope-preserving way. Gradients reach
/// both the lesion values and the layer maps, also at hard violations.
Tensor loss_lp(const LesionMasks& raw_lesions, const LayerMasks& layers,
               const TopologySchema& schema, double eps = 1e-7);

// ---- supervised losses (corrected outputs) ----

Tensor loss_kl_boundary(const BoundaryProbMap& probs, const GaussianBoundaryTarget& target);

/// Mean absolute deviation over S*W; squared variant behind the flag.
Tensor loss_l1_boundary(const BoundarySet& pred, const BoundarySet& reference,
                        bool squared = false);

/// Soft Dice loss averaged over lesion channels (background excluded),
/// smoothing `s` in numerator and denominator.
Tensor loss_dice(const LesionMasks& pred, const LesionMasks& reference, double smooth = 1.0);

/// Dice loss between two mask tensors of equal shape (helper for the
/// anatomy triplet term).
Tensor dice_loss_masks(const Tensor& a, const Tensor& b, double smooth = 1.0);

struct RecLossResult {
    Tensor value;
    bool empty_region = false;
};

/// MAE between original and reconstruction inside the retina band
/// (binarized C^ILM - C^BM); zero with a warning flag when the band is empty.
/// The band itself is treated as data (no gradient through the mask).
RecLossResult loss_rec(const Tensor& original, const Tensor& reconstruction,
                       const LayerMasks& layers);

/// Mean over dimensions of 0.5 (mu^2 + sigma^2 - 1 - log sigma^2).
Tensor loss_zkl(const Tensor& mu, const Tensor& logvar);

/// Penalizes the style-transformed scan's style factor being more similar
/// than the spatially transformed one's. `literal_form` flips the operands
/// to the displayed equation order.
Tensor loss_triplet_style(const Tensor& omega_i, const Tensor& omega_a, const Tensor& omega_s,
                          bool literal_form = false);

Tensor loss_triplet_anatomy(const BoundarySet& p_i, const BoundarySet& p_a,
                            const BoundarySet& p_s, const LesionMasks& l_i,
                            const LesionMasks& l_a, const LesionMasks& l_s);

}  // namespace octseg
