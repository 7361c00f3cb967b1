#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "octseg/tensor.hpp"
#include "octseg/topology.hpp"

namespace octseg {

/// Mean absolute distance per surface in micrometers.
std::vector<double> mad_micrometers(const BoundarySet& pred, const BoundarySet& reference,
                                    double um_per_px);

/// Volume-wise Dice: intersections and sizes aggregate over every added
/// scan before the ratio is taken.
class DiceAccumulator {
  public:
    explicit DiceAccumulator(int channels) : inter_(channels, 0.0), psum_(channels, 0.0),
                                             rsum_(channels, 0.0) {}

    void add(const Tensor& pred, const Tensor& reference);  // (K+..,H,W) binarized
    int channels() const { return static_cast<int>(inter_.size()); }

    /// s -> 0 convention: empty-vs-empty scores 1, empty-vs-nonempty 0.
    double raw(int channel) const;
    double smoothed(int channel, double s = 1.0) const;

  private:
    std::vector<double> inter_, psum_, rsum_;
};

struct MetricsReport {
    std::vector<double> per_surface_mad;   // micrometers
    double total_mad = 0.0;
    std::vector<double> per_lesion_dice_raw;
    std::vector<double> per_lesion_dice_smoothed;
    double total_dice_raw = 0.0;
    double total_dice_smoothed = 0.0;
    long long ordering_violations = 0;
    long long confinement_violations = 0;
    int scans = 0;

    void write_csv(const std::filesystem::path& path,
                   const std::vector<std::string>& surface_names,
                   const std::vector<std::string>& lesion_names) const;
};

}  // namespace octseg
