#pragma once

#include <vector>

namespace octseg {

/// Softmax stage: w_g proportional to magnitude_g * exp(beta * rate_g),
/// renormalized to sum to the component count. Strictly positive.
std::vector<double> softadapt_weights_from_rates(const std::vector<double>& rates,
                                                 const std::vector<double>& magnitudes,
                                                 double beta, double eps = 1e-8);

/// Softmax-over-loss-rates weighting, loss-weighted variant. beta > 0 puts
/// more weight on the worst-performing (slowest-improving) component.
/// Returns uniform weights (all 1) until every history holds window+1
/// samples. Weights are strictly positive and sum to the component count.
std::vector<double> softadapt_update(const std::vector<std::vector<double>>& history,
                                     double beta, int window = 10, double eps = 1e-8);

/// Stateful wrapper feeding a rolling per-component history.
class SoftAdapt {
  public:
    SoftAdapt(int components, double beta, int window = 10, double eps = 1e-8);

    void push(const std::vector<double>& losses);
    std::vector<double> weights() const;
    int components() const { return static_cast<int>(history_.size()); }

  private:
    std::vector<std::vector<double>> history_;
    double beta_;
    int window_;
    double eps_;
};

}  // namespace octseg
