// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spreadnet/linear_baseline.hpp"
#include "spreadnet/model.hpp"

namespace spreadnet {

struct EvalConfig {
  TemporalMode mode = TemporalMode::kNone;
  TaskSpec task;
  size_t m_trajectories = 1;
  std::string heatmap_dir;    ///< empty disables heatmap output
  size_t max_heatmaps = 4;    ///< per run, first samples of the test split
  size_t heatmap_level = 2;   ///< level index for the squared-error maps
};

/// Test-split summary. All RMSE values are in destandardized (physical spread)
/// units over the target parameter's evaluated planes.
struct EvalReport {
  size_t n_samples = 0;
  double model_rmse = 0.0;
  std::vector<double> model_rmse_per_level;   ///< indexed by evaluated level
  std::vector<double> member_ladder_rmse;     ///< entry m-1: m-member spread estimator
  double linear_rmse = 0.0;
  std::vector<std::string> heatmap_paths;

  void validate() const;
};

/// Standardized prediction for one sample (same shape as make_model_target).
using Predictor = std::function<Tensor(const EnsembleSample&, const Tensor& input)>;

/// Streams the test files one at a time. For each sample, compares against the
/// full-ensemble spread of the target parameter: (a) the model prediction
/// (destandardized), (b) the m-member sample-spread estimators for
/// m = 1..M-1 (the one-member spread is identically zero), (c) the linear
/// per-plane baseline applied to the spread at the first forecast time.
EvalReport evaluate(UNet& model, const std::vector<std::string>& test_paths,
                    const DatasetStats& stats, const LinearBaseline& baseline,
                    const EvalConfig& cfg);

/// Same contract with an injected predictor (testing hook).
EvalReport evaluate_with_predictor(const Predictor& predict,
                                   const std::vector<std::string>& test_paths,
                                   const DatasetStats& stats, const LinearBaseline& baseline,
                                   const EvalConfig& cfg);

/// Fits the per-plane linear baseline spread(input_time) -> spread(target_time)
/// by streaming the given (training) files.
LinearBaseline fit_spread_baseline(const std::vector<std::string>& esg_paths,
                                   size_t input_time, size_t target_time);

void write_eval_report_txt(const EvalReport& report, const std::string& path);
void write_eval_report_csv(const EvalReport& report, const std::string& path);

/// Two-column name/RMSE table used for the convolution-variant comparison.
void write_variant_table(const std::vector<std::pair<std::string, double>>& rows,
                         const std::string& path);

}  // namespace spreadnet
