#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "octseg/tensor.hpp"

namespace octseg {

struct GradCheckResult {
    std::vector<double> max_rel_err;  // one entry per input tensor
    double worst = 0.0;
    int resamples = 0;
    bool ok = false;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares the analytic gradient of scalar-projected `fn` against central
/// finite differences (f(x+eps) - f(x-eps)) / 2eps elementwise.
///
/// Sample points landing within `kink_margin` of a rectifier/abs/clamp/min
/// kink are rejected and the inputs redrawn by `resample` (up to
/// `max_resamples` times); the number of redraws is reported. round_ste is
/// outside the checker's domain and is rejected outright.
GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs, double eps,
                           double tol, std::uint64_t seed,
                           const std::function<std::vector<Tensor>(std::uint64_t)>& resample = {},
                           int max_resamples = 25, double kink_margin = 1e-3);

/// Fresh random inputs uniform in [-3, 3] with the given shapes.
std::vector<Tensor> random_inputs(const std::vector<Shape>& shapes, std::uint64_t seed,
                                  double lo = -3.0, double hi = 3.0);

struct OpCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int resamples = 0;
    bool ok = false;
};

/// Finite-difference checks over every differentiable primitive and loss
/// (round_ste verified separately as an exact-identity backward). `filter`
/// restricts the run to ops whose name contains it.
std::vector<OpCheckResult> run_gradcheck_suite(const std::string& filter = "",
                                               double tol = 1e-4);

}  // namespace octseg
