#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tqnet/tensor.hpp"

namespace tqnet {

struct GradientGroupReport {
  std::string name;
  std::size_t elements = 0;
  bool frozen = false;
  double max_rel_error = 0.0;
  // Largest |analytic gradient| seen; exactly 0 for frozen groups.
  double max_abs_grad = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientGroupReport> groups;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Builds the scalar loss. Called with a tape for the analytic pass and with
// nullptr for every finite-difference probe.
using LossClosure = std::function<DiffTensor<double>(Tape<double>*)>;

// Compares reverse-mode gradients with central differences
// (f(v + eps) - f(v - eps)) / (2 eps) for every element of every trainable
// parameter. The per-element error is |a - n| / max(|a|, |n|, abs_floor).
// Throws HarnessError when two plain forward passes disagree.
GradientCheckReport gradient_check(const LossClosure& loss,
                                   std::vector<NamedTensor<double>> params,
                                   double eps = 1e-6, double tol = 1e-4,
                                   double abs_floor = 1e-6);

}  // namespace tqnet
