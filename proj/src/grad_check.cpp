#include "octseg/grad_check.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace octseg {

namespace {

// Walks the recorded graph under `root` and reports whether any kinked
// primitive was evaluated within `margin` of its non-differentiable point.
bool near_kink(const std::shared_ptr<detail::Node>& root, double margin) {
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        switch (n->kind) {
            case OpKind::kRelu:
            case OpKind::kAbs:
                for (double v : n->parents[0]->value) {
                    if (std::fabs(v) < margin) return true;
                }
                break;
            case OpKind::kClamp:
                for (double v : n->parents[0]->value) {
                    if (std::fabs(v - n->aux0) < margin || std::fabs(v - n->aux1) < margin) {
                        return true;
                    }
                }
                break;
            case OpKind::kMinBt:
                for (size_t i = 0; i < n->value.size(); ++i) {
                    if (std::fabs(n->parents[0]->value[i] - n->parents[1]->value[i]) < margin) {
                        return true;
                    }
                }
                break;
            case OpKind::kRoundSte:
                throw std::invalid_argument(
                    "grad_check: round_ste is not classically differentiable; "
                    "verify its backward as an identity instead");
            default:
                break;
        }
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    return false;
}

double projected_scalar(const Tensor& out, const std::vector<double>& proj) {
    double s = 0.0;
    for (size_t i = 0; i < out.data().size(); ++i) s += out.data()[i] * proj[i];
    return s;
}

}  // namespace

std::vector<Tensor> random_inputs(const std::vector<Shape>& shapes, std::uint64_t seed,
                                  double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<Tensor> out;
    out.reserve(shapes.size());
    for (const Shape& s : shapes) {
        std::vector<double> data(static_cast<size_t>(shape_numel(s)));
        for (double& v : data) v = dist(rng);
        out.push_back(Tensor::from_data(s, std::move(data), true));
    }
    return out;
}

GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs, double eps,
                           double tol, std::uint64_t seed,
                           const std::function<std::vector<Tensor>(std::uint64_t)>& resample,
                           int max_resamples, double kink_margin) {
    GradCheckResult res;
    Tensor out;
    for (int attempt = 0;; ++attempt) {
        out = fn(inputs);
        if (!near_kink(out.node(), kink_margin)) break;
        if (!resample || attempt >= max_resamples) {
            throw std::runtime_error("grad_check: could not find a kink-free sample point");
        }
        inputs = resample(seed + 1 + static_cast<std::uint64_t>(attempt));
        ++res.resamples;
    }

    // Fixed random projection so the scalar sees every output coordinate.
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> dist(0.25, 1.0);
    std::vector<double> proj(out.data().size());
    for (double& v : proj) v = dist(rng);

    // Analytic pass.
    Tensor projected = sum(mul(out, Tensor::from_data(out.shape(), proj)));
    for (const Tensor& in : inputs) in.zero_grad();
    projected.backward();
    std::vector<std::vector<double>> analytic;
    for (const Tensor& in : inputs) {
        analytic.push_back(in.has_grad() ? in.grad()
                                         : std::vector<double>(in.data().size(), 0.0));
    }

    // Numeric pass, one coordinate at a time.
    res.max_rel_err.assign(inputs.size(), 0.0);
    for (size_t t = 0; t < inputs.size(); ++t) {
        std::vector<double>& data = inputs[t].mutable_data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double fp = projected_scalar(fn(inputs), proj);
            data[i] = saved - eps;
            const double fm = projected_scalar(fn(inputs), proj);
            data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
            const double rel = std::fabs(a - numeric) / denom;
            res.max_rel_err[t] = std::max(res.max_rel_err[t], rel);
        }
        res.worst = std::max(res.worst, res.max_rel_err[t]);
    }
    res.ok = res.worst < tol;
    return res;
}

}  // namespace octseg
