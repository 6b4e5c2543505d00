#pragma once

#include <cstddef>
#include <cstdint>

#include "tqnet/gradient_check.hpp"
#include "tqnet/model.hpp"

namespace tqnet {

// C=2, L=8, W=4, H=2, d=4, two heads, no dropout.
ModelConfig tiny_gradcheck_config();

// Finite-difference check of a full forward pass plus MSE loss in double
// precision. Every parameter, including the query bank, is re-drawn from
// N(0, 0.5^2) so that no group sits at a degenerate point; inputs, targets
// and window starts are drawn from the same seed.
GradientCheckReport model_gradient_check(const ModelConfig& config,
                                         const VariantSpec& variant = VariantSpec::tqnet(),
                                         std::size_t batch = 3,
                                         std::uint64_t seed = 7,
                                         double eps = 1e-6, double tol = 1e-4);

}  // namespace tqnet
