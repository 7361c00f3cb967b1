#include "octseg/softadapt.hpp"

#include <cmath>
#include <stdexcept>

namespace octseg {

std::vector<double> softadapt_weights_from_rates(const std::vector<double>& rates,
                                                 const std::vector<double>& magnitudes,
                                                 double beta, double eps) {
    const int n = static_cast<int>(rates.size());
    if (static_cast<int>(magnitudes.size()) != n) {
        throw std::invalid_argument("softadapt: rates and magnitudes differ in size");
    }
    std::vector<double> weights(n);
    double mag_mean = 0.0;
    for (double m : magnitudes) mag_mean += std::fabs(m);
    mag_mean = mag_mean / n + eps;
    double denom = 0.0;
    for (int g = 0; g < n; ++g) {
        const double mag = (std::fabs(magnitudes[g]) + eps) / mag_mean;
        weights[g] = mag * std::exp(beta * rates[g]);
        denom += weights[g];
    }
    for (int g = 0; g < n; ++g) weights[g] *= n / denom;
    return weights;
}

std::vector<double> softadapt_update(const std::vector<std::vector<double>>& history,
                                     double beta, int window, double eps) {
    const int n = static_cast<int>(history.size());
    if (n == 0) return {};
    std::vector<double> weights(n, 1.0);
    for (const auto& h : history) {
        if (static_cast<int>(h.size()) < window + 1) return weights;  // window not filled
    }

    // Rate of change: mean first difference over the window, normalized so
    // the rates sum to unit magnitude.
    std::vector<double> rate(n, 0.0);
    double norm = eps;
    for (int g = 0; g < n; ++g) {
        const auto& h = history[g];
        const size_t last = h.size() - 1;
        double acc = 0.0;
        for (int i = 0; i < window; ++i) {
            acc += h[last - i] - h[last - i - 1];
        }
        rate[g] = acc / window;
        norm += std::fabs(rate[g]);
    }
    for (int g = 0; g < n; ++g) rate[g] /= norm;

    std::vector<double> mags(n);
    for (int g = 0; g < n; ++g) mags[g] = history[g].back();
    return softadapt_weights_from_rates(rate, mags, beta, eps);
}

SoftAdapt::SoftAdapt(int components, double beta, int window, double eps)
    : history_(components), beta_(beta), window_(window), eps_(eps) {
    if (components <= 0) throw std::invalid_argument("SoftAdapt: need at least one component");
}

void SoftAdapt::push(const std::vector<double>& losses) {
    if (losses.size() != history_.size()) {
        throw std::invalid_argument("SoftAdapt: expected " + std::to_string(history_.size()) +
                                    " losses, got " + std::to_string(losses.size()));
    }
    for (size_t g = 0; g < losses.size(); ++g) {
        history_[g].push_back(losses[g]);
        if (static_cast<int>(history_[g].size()) > window_ + 1) {
            history_[g].erase(history_[g].begin());
        }
    }
}

std::vector<double> SoftAdapt::weights() const {
    return softadapt_update(history_, beta_, window_, eps_);
}

}  // namespace octseg
