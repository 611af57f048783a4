#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qnet/tensor.hpp"

namespace qnet {

/// |a - n| / max(|a|, |n|, 1e-12)
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
  return std::fabs(analytic - numeric) / denom;
}

/// A block of inputs to perturb, paired with the analytic gradient computed for it.
struct GradTarget {
  std::string name;
  std::span<double> value;
  std::span<const double> analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_target;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check in 64-bit arithmetic. `loss` must be a pure function of the
/// current target values; each element is restored exactly after perturbation.
GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradTarget>& targets,
                           double h = 1e-5);

inline GradTarget target_of(Parameter<double>& p) { return {p.name, p.value.data(), p.grad.data()}; }

}  // namespace qnet
