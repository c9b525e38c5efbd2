#pragma once

#include <cstdint>
#include <vector>

#include "core/network.hpp"

namespace moe {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked =  0;
};

// Compares backprop gradients against central finite differences of the
// cross-entropy loss for up to max_weights randomly sampled parameters.
// Both sides run through the layer code instantiated at double precision
// (weights copied from the float network), so the bound tests the formulas
// rather than float32 rounding. Relative error per weight is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult gradient_check(const Network& net, const Tensor& batch,
                               const std::vector<int>& labels, double epsilon = 1e-3,
                               int max_weights = 100, uint64_t seed = 1);

}  // namespace moe
