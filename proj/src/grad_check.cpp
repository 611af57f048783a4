#include "qnet/grad_check.hpp"

#include "qnet/error.hpp"

namespace qnet {

GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradTarget>& targets, double h) {
  GradCheckReport report;
  for (const auto& t : targets) {
    if (t.value.size() != t.analytic.size()) {
      throw DimensionError("grad_check: target '" + t.name + "' has mismatched value/gradient sizes");
    }
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      const double saved = t.value[i];
      t.value[i] = saved + h;
      const double up = loss();
      t.value[i] = saved - h;
      const double down = loss();
      t.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(t.analytic[i], numeric);
      if (err > report.max_rel_error || report.worst_target.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_target = t.name;
          report.worst_index = i;
          report.worst_analytic = t.analytic[i];
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace qnet
