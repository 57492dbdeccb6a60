// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spreadnet {

struct GradCheckResult {
  std::string layer;
  double max_rel_err = 0.0;
  double threshold = 0.0;

  bool pass() const { return max_rel_err < threshold; }
};

/// Central-difference gradient checks for every differentiable layer (against
/// inputs, weights, and biases) plus a tiny end-to-end U-Net (against its
/// input). Inputs are seeded and kept away from kinks: maxpool windows get
/// values with pairwise margins far above the step size. Thresholds: 1e-6 per
/// layer, 1e-5 for the composed U-Net.
std::vector<GradCheckResult> run_layer_grad_checks(uint64_t seed);

}  // namespace spreadnet
