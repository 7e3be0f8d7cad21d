#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "egovit/nn.hpp"
#include "egovit/tensor.hpp"

namespace egovit {

/// Hard cap on the finite-difference oracle: two evaluations per scalar make
/// it quadratic-ish in practice, so it only runs on deliberately tiny configs.
constexpr std::size_t kMaxFiniteDiffParams = 10000;

/// Central finite differences of a deterministic scalar function w.r.t. every
/// scalar in `params`. Parameters are perturbed in place and restored.
inline std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                            std::vector<Tensor>& params,
                                            double step = 1e-5) {
  std::size_t total = tensor_list_scalar_count(params);
  if (total >= kMaxFiniteDiffParams)
    throw std::invalid_argument("finite_diff_grad: " + std::to_string(total) +
                                " parameters exceeds the oracle cap of " +
                                std::to_string(kMaxFiniteDiffParams));
  std::vector<double> grad(total);
  GradMode off(false);
  std::size_t at = 0;
  for (Tensor& t : params) {
    for (std::size_t i = 0; i < t.size(); ++i, ++at) {
      const double orig = t.at(i);
      t.at(i) = orig + step;
      const double fp = f();
      t.at(i) = orig - step;
      const double fm = f();
      t.at(i) = orig;
      grad[at] = (fp - fm) / (2.0 * step);
    }
  }
  return grad;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Relative error with a small floor so near-zero gradient pairs compare on an
/// absolute scale instead of blowing up.
inline GradCheckResult compare_grads(const std::vector<Tensor>& params,
                                     const std::vector<double>& numeric) {
  GradCheckResult r;
  std::size_t at = 0;
  for (const Tensor& t : params) {
    const double* g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i, ++at) {
      const double a = g ? g[i] : 0.0;
      const double b = numeric[at];
      const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
      const double rel = std::fabs(a - b) / denom;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst_index = at;
        r.analytic_at_worst = a;
        r.numeric_at_worst = b;
      }
    }
  }
  return r;
}

}  // namespace egovit
