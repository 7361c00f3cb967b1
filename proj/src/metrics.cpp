#include "octseg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace octseg {

std::vector<double> mad_micrometers(const BoundarySet& pred, const BoundarySet& reference,
                                    double um_per_px) {
    if (pred.positions.shape() != reference.positions.shape()) {
        throw std::invalid_argument("mad: shape mismatch " + shape_str(pred.positions.shape()) +
                                    " vs " + shape_str(reference.positions.shape()));
    }
    const int S = pred.num_surfaces(), W = pred.cols();
    std::vector<double> out(S, 0.0);
    for (int s = 0; s < S; ++s) {
        double acc = 0.0;
        for (int i = 0; i < W; ++i) {
            acc += std::fabs(pred.positions.data()[static_cast<size_t>(s) * W + i] -
                             reference.positions.data()[static_cast<size_t>(s) * W + i]);
        }
        out[s] = acc / W * um_per_px;
    }
    return out;
}

void DiceAccumulator::add(const Tensor& pred, const Tensor& reference) {
    if (pred.shape() != reference.shape()) {
        throw std::invalid_argument("dice accumulator: shape mismatch " +
                                    shape_str(pred.shape()) + " vs " +
                                    shape_str(reference.shape()));
    }
    const int C = channels();
    if (pred.shape()[0] < C) {
        throw std::invalid_argument("dice accumulator: expected at least " + std::to_string(C) +
                                    " channels");
    }
    const long long plane = pred.numel() / pred.shape()[0];
    for (int c = 0; c < C; ++c) {
        const double* p = &pred.data()[static_cast<size_t>(c) * plane];
        const double* r = &reference.data()[static_cast<size_t>(c) * plane];
        for (long long i = 0; i < plane; ++i) {
            inter_[c] += p[i] * r[i];
            psum_[c] += p[i];
            rsum_[c] += r[i];
        }
    }
}

double DiceAccumulator::raw(int channel) const {
    const double denom = psum_[channel] + rsum_[channel];
    if (denom == 0.0) return 1.0;  // nothing predicted, nothing to find
    return 2.0 * inter_[channel] / denom;
}

double DiceAccumulator::smoothed(int channel, double s) const {
    return (2.0 * inter_[channel] + s) / (psum_[channel] + rsum_[channel] + s);
}

void MetricsReport::write_csv(const std::filesystem::path& path,
                              const std::vector<std::string>& surface_names,
                              const std::vector<std::string>& lesion_names) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("metrics: cannot write " + path.string());
    os << "metric,name,value\n";
    os.precision(10);
    for (size_t s = 0; s < per_surface_mad.size(); ++s) {
        os << "mad_um," << surface_names.at(s) << "," << per_surface_mad[s] << "\n";
    }
    os << "mad_um,total," << total_mad << "\n";
    for (size_t k = 0; k < per_lesion_dice_raw.size(); ++k) {
        os << "dice_raw," << lesion_names.at(k) << "," << per_lesion_dice_raw[k] << "\n";
        os << "dice_smoothed," << lesion_names.at(k) << "," << per_lesion_dice_smoothed[k] << "\n";
    }
    os << "dice_raw,total," << total_dice_raw << "\n";
    os << "dice_smoothed,total," << total_dice_smoothed << "\n";
    os << "violations,ordering," << ordering_violations << "\n";
    os << "violations,confinement," << confinement_violations << "\n";
    os << "scans,count," << scans << "\n";
}

}  // namespace octseg
