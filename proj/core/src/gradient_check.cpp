#include "tqnet/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace tqnet {

GradientCheckReport gradient_check(const LossClosure& loss,
                                   std::vector<NamedTensor<double>> params,
                                   double eps, double tol, double abs_floor) {
  const double first = loss(nullptr).item();
  const double second = loss(nullptr).item();
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw HarnessError("loss closure is not deterministic: " +
                       std::to_string(first) + " vs " + std::to_string(second));
  }

  for (auto& p : params) p.tensor.zero_grad();
  Tape<double> tape;
  auto value = loss(&tape);
  if (!tape.empty()) tape.backward(value);

  GradientCheckReport report;
  report.tolerance = tol;
  for (auto& p : params) {
    GradientGroupReport group;
    group.name = p.name;
    group.elements = p.tensor.size();
    group.frozen = !p.tensor.requires_grad();
    if (group.frozen) {
      for (double g : std::as_const(p.tensor).grad()) {
        group.max_abs_grad = std::max(group.max_abs_grad, std::abs(g));
      }
      report.groups.push_back(group);
      continue;
    }
    const std::vector<double> analytic(std::as_const(p.tensor).grad().begin(),
                                       std::as_const(p.tensor).grad().end());
    auto values = p.tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss(nullptr).item();
      values[i] = saved - eps;
      const double down = loss(nullptr).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double err = std::isfinite(a) && std::isfinite(numeric)
                             ? std::abs(a - numeric) / denom
                             : std::numeric_limits<double>::infinity();
      group.max_rel_error = std::max(group.max_rel_error, err);
      group.max_abs_grad = std::max(group.max_abs_grad, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace tqnet
