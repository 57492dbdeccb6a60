// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spreadnet/dataio.hpp"
#include "spreadnet/model.hpp"
#include "spreadnet/tape.hpp"

namespace spreadnet {

struct TrainConfig {
  size_t batch_size = 8;
  size_t steps = 100;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  size_t n_workers = 1;
  uint64_t seed = 0;
  size_t checkpoint_every = 50;  ///< validation + best-checkpoint cadence, in steps
  size_t m_trajectories = 1;     ///< input members for raw channel packing

  void validate() const;
};

/// Mean over all elements of the squared difference; differentiable in pred.
Tensor mse_loss(Tape* tape, const Tensor& pred, const Tensor& target);

/// sqrt(mse) on plain values; no tape involved.
double rmse_metric(const Tensor& pred, const Tensor& target);

/// First/second-moment Adam state, keyed like the parameter store.
struct AdamState {
  size_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One Adam update with bias correction (eps added outside the square root).
/// `grads` must hold exactly one entry per parameter, matching sizes.
void adam_step(ModelParams& params, const std::map<std::string, std::vector<double>>& grads,
               AdamState& state, const TrainConfig& cfg);

/// Prepared (input, target) tensor pairs for the three splits.
struct TrainData {
  std::vector<Tensor> train_inputs, train_targets;
  std::vector<Tensor> val_inputs, val_targets;

  void validate() const;
};

/// Reads `<dir>/<id>.esg` for the manifest's train and val ids and packs them
/// with make_model_input / make_model_target. Samples are streamed; only the
/// packed tensors are kept.
TrainData load_training_data(const std::string& dir, const SplitManifest& manifest,
                             const DatasetStats& stats, TemporalMode mode,
                             const TaskSpec& task, size_t m_trajectories);

struct TrainCurvePoint {
  size_t step = 0;
  double train_mse = 0.0;
  bool has_val = false;
  double val_rmse = 0.0;
};

struct TrainResult {
  std::vector<TrainCurvePoint> curve;
  double best_val_rmse = 0.0;  ///< only meaningful when a validation ran
  size_t best_step = 0;
  double final_train_mse = 0.0;
};

/// Seeded mini-batch training; mutates `model` in place and leaves the
/// best-validation parameters in it (final parameters if no validation ran).
///
/// Per step: a batch is drawn with replacement from the train split using
/// Rng::derive(cfg.seed, 1), split into n_workers contiguous equal shards,
/// and each worker accumulates per-sample gradients against the same
/// parameter snapshot on its own thread. Gradient sums are reduced in worker
/// order, divided by the batch size, and applied with one adam_step.
/// Batchnorm running stats are updated from worker 0's shard only, in sample
/// order. Results are bitwise reproducible for a fixed (seed, n_workers).
TrainResult train_model(UNet& model, const TrainData& data, const TrainConfig& cfg);

/// CSV with a `step,train_mse,val_rmse` header; val_rmse is blank on steps
/// without validation.
void write_curve_csv(const std::vector<TrainCurvePoint>& curve, const std::string& path);

}  // namespace spreadnet
