// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "spreadnet/ops.hpp"
#include "spreadnet/rng.hpp"

namespace spreadnet {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (n_workers == 0) throw std::invalid_argument("TrainConfig: n_workers must be >= 1");
  if (batch_size % n_workers != 0) {
    throw std::invalid_argument("TrainConfig: batch_size " + std::to_string(batch_size) +
                                " is not divisible by n_workers " +
                                std::to_string(n_workers));
  }
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: adam betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be > 0");
  if (checkpoint_every == 0) {
    throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
  }
  if (m_trajectories == 0) {
    throw std::invalid_argument("TrainConfig: m_trajectories must be >= 1");
  }
}

Tensor mse_loss(Tape* tape, const Tensor& pred, const Tensor& target) {
  Tensor::require_same_shape("mse_loss", pred, target);
  Tensor diff = sub(tape, pred, target);
  return mean(tape, mul(tape, diff, diff));
}

double rmse_metric(const Tensor& pred, const Tensor& target) {
  Tensor::require_same_shape("rmse_metric", pred, target);
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    sum += d * d;
  }
  return std::sqrt(sum / double(pred.size()));
}

void adam_step(ModelParams& params, const std::map<std::string, std::vector<double>>& grads,
               AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.names().size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params.names().size()) +
                                " parameters");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (const std::string& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw std::invalid_argument("adam_step: no gradient for parameter '" + name + "'");
    }
    Tensor& p = params.at(name);
    const std::vector<double>& g = git->second;
    if (g.size() != p.size()) {
      throw std::invalid_argument("adam_step: gradient size " + std::to_string(g.size()) +
                                  " for parameter '" + name + "' of size " +
                                  std::to_string(p.size()));
    }
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    if (v.empty()) v.assign(p.size(), 0.0);
    double* pd = p.mutable_data();
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      pd[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void TrainData::validate() const {
  if (train_inputs.empty()) throw std::invalid_argument("empty training set");
  if (train_inputs.size() != train_targets.size() ||
      val_inputs.size() != val_targets.size()) {
    throw std::invalid_argument("TrainData: input/target count mismatch");
  }
}

TrainData load_training_data(const std::string& dir, const SplitManifest& manifest,
                             const DatasetStats& stats, TemporalMode mode,
                             const TaskSpec& task, size_t m_trajectories) {
  TrainData data;
  auto load_split = [&](const std::vector<std::string>& ids, std::vector<Tensor>& inputs,
                        std::vector<Tensor>& targets) {
    for (const std::string& id : ids) {
      EnsembleSample sample = read_esg(dir + "/" + id + ".esg");
      inputs.push_back(make_model_input(sample, stats, mode, task, m_trajectories));
      targets.push_back(make_model_target(sample, stats, mode, task));
    }
  };
  load_split(manifest.train_ids, data.train_inputs, data.train_targets);
  load_split(manifest.val_ids, data.val_inputs, data.val_targets);
  data.validate();
  return data;
}

namespace {

struct WorkerOut {
  std::map<std::string, std::vector<double>> grad_sum;
  double loss_sum = 0.0;
  std::vector<BatchNormStats> stats;
  std::exception_ptr error;
};

void run_worker(UNet& model, const TrainData& data, const std::vector<size_t>& batch,
                size_t begin, size_t end, WorkerOut& out) {
  try {
    for (size_t i = begin; i < end; ++i) {
      const size_t idx = batch[i];
      Tape tape;
      std::vector<std::pair<std::string, Tensor>> watched;
      Tensor pred =
          model.forward(&tape, data.train_inputs[idx], /*train=*/true, &out.stats, &watched);
      Tensor loss = mse_loss(&tape, pred, data.train_targets[idx]);
      out.loss_sum += loss.value();
      tape.backward(loss);
      for (const auto& [name, tracked] : watched) {
        Tensor g = tape.gradient(tracked);
        std::vector<double>& acc = out.grad_sum[name];
        if (acc.empty()) acc.assign(g.size(), 0.0);
        for (size_t j = 0; j < g.size(); ++j) acc[j] += g.data()[j];
      }
    }
  } catch (...) {
    out.error = std::current_exception();
  }
}

double validation_rmse(UNet& model, const TrainData& data) {
  double sq_sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < data.val_inputs.size(); ++i) {
    Tensor pred = model.forward(nullptr, data.val_inputs[i], /*train=*/false);
    const Tensor& target = data.val_targets[i];
    Tensor::require_same_shape("validation", pred, target);
    for (size_t j = 0; j < pred.size(); ++j) {
      const double d = pred.data()[j] - target.data()[j];
      sq_sum += d * d;
    }
    count += pred.size();
  }
  return std::sqrt(sq_sum / double(count));
}

}  // namespace

TrainResult train_model(UNet& model, const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();

  const size_t n_train = data.train_inputs.size();
  const size_t shard = cfg.batch_size / cfg.n_workers;
  Rng batch_rng = Rng::derive(cfg.seed, 1);
  AdamState adam;
  TrainResult result;
  ModelParams best_params;
  bool have_best = false;

  for (size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<size_t> batch(cfg.batch_size);
    for (size_t i = 0; i < cfg.batch_size; ++i) batch[i] = batch_rng.next_below(n_train);

    std::vector<WorkerOut> outs(cfg.n_workers);
    {
      std::vector<std::thread> threads;
      threads.reserve(cfg.n_workers);
      for (size_t w = 0; w < cfg.n_workers; ++w) {
        threads.emplace_back(run_worker, std::ref(model), std::cref(data),
                             std::cref(batch), w * shard, (w + 1) * shard,
                             std::ref(outs[w]));
      }
      for (std::thread& t : threads) t.join();
    }
    for (const WorkerOut& out : outs) {
      if (out.error) std::rethrow_exception(out.error);
    }

    // Fixed reduction order: worker 0, 1, ... then the 1/B scale.
    std::map<std::string, std::vector<double>> grads;
    double loss_sum = 0.0;
    for (const WorkerOut& out : outs) {
      loss_sum += out.loss_sum;
      for (const auto& [name, g] : out.grad_sum) {
        std::vector<double>& acc = grads[name];
        if (acc.empty()) acc.assign(g.size(), 0.0);
        for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
      }
    }
    const double inv_b = 1.0 / double(cfg.batch_size);
    for (auto& [name, g] : grads) {
      for (double& v : g) v *= inv_b;
    }
    const double train_mse = loss_sum * inv_b;
    if (!std::isfinite(train_mse)) {
      throw std::runtime_error("diverged at step " + std::to_string(step));
    }

    adam_step(model.params(), grads, adam, cfg);
    model.apply_norm_updates(outs[0].stats);

    TrainCurvePoint point;
    point.step = step;
    point.train_mse = train_mse;
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      if (!data.val_inputs.empty()) {
        point.has_val = true;
        point.val_rmse = validation_rmse(model, data);
        if (!std::isfinite(point.val_rmse)) {
          throw std::runtime_error("diverged at step " + std::to_string(step));
        }
        if (!have_best || point.val_rmse < result.best_val_rmse) {
          have_best = true;
          result.best_val_rmse = point.val_rmse;
          result.best_step = step;
          best_params = model.params();
        }
      }
    }
    result.curve.push_back(point);
    result.final_train_mse = train_mse;
  }

  if (have_best) {
    UNet best(model.spec(), std::move(best_params));
    model = std::move(best);
  }
  return result;
}

void write_curve_csv(const std::vector<TrainCurvePoint>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << "step,train_mse,val_rmse\n";
  char buf[64];
  for (const TrainCurvePoint& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,", p.step, p.train_mse);
    out << buf;
    if (p.has_val) {
      std::snprintf(buf, sizeof buf, "%.17g", p.val_rmse);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace spreadnet
