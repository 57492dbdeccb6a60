// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spreadnet/grids.hpp"

namespace spreadnet {

/// Per-(param, level) scalar linear map `y = a*x + b` from the spread at one
/// forecast time to the spread at a later one, fit by ordinary least squares
/// pooled over samples and grid points.
struct LinearBaseline {
  size_t n_params = 0;
  size_t n_levels = 0;
  std::vector<double> slope;      ///< [param][level]
  std::vector<double> intercept;  ///< [param][level]

  size_t index(size_t param, size_t level) const { return param * n_levels + level; }
  void validate() const;
};

/// Streaming per-plane OLS accumulator (bivariate Welford updates), so fits
/// never need all training fields in memory at once.
class BaselineAccumulator {
 public:
  void add(const Field& input, const Field& target);
  LinearBaseline finalize() const;

 private:
  size_t n_params_ = 0, n_levels_ = 0, hw_ = 0;
  std::vector<double> count_, mean_x_, mean_y_, m2x_, cxy_;
};

/// Fits one regression per (param, level) from (input spread, target spread)
/// field pairs. A plane whose inputs have zero variance degrades to the
/// constant predictor `b = mean(target)`.
LinearBaseline fit_linear_baseline(const std::vector<std::pair<Field, Field>>& pairs);

/// Applies the per-plane affine map to an input spread field.
Field predict_linear_baseline(const LinearBaseline& baseline, const Field& input);

void save_baseline(const LinearBaseline& baseline, const std::string& path);
LinearBaseline load_baseline(const std::string& path);

}  // namespace spreadnet
