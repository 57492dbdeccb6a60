// SPDX-License-Identifier: Apache-2.0
//
// Tests for the loss/metric pair, the Adam optimizer (frozen single-step
// oracle: with gradient 1 at t = 1 the update is -lr / (1 + eps), i.e.
// -9.99999990e-4 at the defaults) and the seeded data-parallel trainer.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "spreadnet/rng.hpp"
#include "spreadnet/train.hpp"
#include "test_util.hpp"

using namespace spreadnet;
using spreadnet::testing::TempDir;
using spreadnet::testing::read_text_file;

namespace {

Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (size_t i = 0; i < t.size(); ++i) t.mutable_data()[i] = scale * rng.gaussian();
  return t;
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (a.names() != b.names()) return false;
  for (const auto& name : a.names()) {
    const Tensor& ta = a.at(name);
    const Tensor& tb = b.at(name);
    if (!ta.same_shape(tb)) return false;
    for (size_t i = 0; i < ta.size(); ++i) {
      if (ta.data()[i] != tb.data()[i]) return false;
    }
  }
  return true;
}

/// Tiny synthetic task: inputs [C][P][H][W] and targets [1][P][H][W] where
/// the target is a fixed linear blend of the input channels. A small U-Net
/// must be able to drive its training loss down on this quickly.
TrainData linear_blend_data(size_t n_train, size_t n_val, uint64_t seed) {
  TrainData data;
  Rng rng(seed);
  auto emit = [&](std::vector<Tensor>& xs, std::vector<Tensor>& ys) {
    const Tensor x = randn(Shape{2, 2, 4, 4}, rng);
    Tensor y(Shape{1, 2, 4, 4});
    const size_t per = 2 * 4 * 4;
    for (size_t i = 0; i < per; ++i) {
      y.mutable_data()[i] = 0.6 * x.data()[i] - 0.3 * x.data()[per + i];
    }
    xs.push_back(x);
    ys.push_back(y);
  };
  for (size_t i = 0; i < n_train; ++i) emit(data.train_inputs, data.train_targets);
  for (size_t i = 0; i < n_val; ++i) emit(data.val_inputs, data.val_targets);
  return data;
}

ModelSpec tiny_model_spec(uint64_t seed) {
  ModelSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 1;
  spec.base_channels = 2;
  spec.depth = 1;
  spec.n_levels = 2;
  spec.seed = seed;
  return spec;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss and metric.

TEST_CASE("mse of a constant offset 2 is 4, rmse is 2") {
  const Tensor pred = Tensor::full(Shape{3, 5}, 3.0);
  const Tensor target = Tensor::full(Shape{3, 5}, 1.0);
  CHECK(mse_loss(nullptr, pred, target).value() == 4.0);
  CHECK(rmse_metric(pred, target) == 2.0);
}

TEST_CASE("rmse squared equals mse") {
  Rng rng(1);
  const Tensor pred = randn(Shape{4, 7}, rng);
  const Tensor target = randn(Shape{4, 7}, rng);
  const double mse = mse_loss(nullptr, pred, target).value();
  const double rmse = rmse_metric(pred, target);
  CHECK(std::abs(rmse * rmse - mse) <= 1e-12);
}

TEST_CASE("mse gradient is 2 (pred - target) / n") {
  Tape tape;
  const Tensor pred = tape.watch(Tensor(Shape{2}, {3.0, -1.0}));
  const Tensor target(Shape{2}, {1.0, 1.0});
  tape.backward(mse_loss(&tape, pred, target));
  const Tensor g = tape.gradient(pred);
  CHECK(g.data()[0] == doctest::Approx(2.0 * 2.0 / 2.0).epsilon(1e-15));
  CHECK(g.data()[1] == doctest::Approx(2.0 * -2.0 / 2.0).epsilon(1e-15));
}

TEST_CASE("mse rejects mismatched shapes") {
  CHECK_THROWS(mse_loss(nullptr, Tensor(Shape{2}), Tensor(Shape{3})));
}

// ---------------------------------------------------------------------------
// Adam.

namespace {
ModelParams single_scalar_param(double value) {
  ModelParams p;
  p.add("w", Tensor::scalar(value));
  return p;
}
}  // namespace

TEST_CASE("one Adam step with gradient 1 moves by -lr/(1 + eps)") {
  ModelParams params = single_scalar_param(0.0);
  AdamState state;
  TrainConfig cfg;
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {1.0};
  adam_step(params, grads, state, cfg);
  // m-hat = v-hat = 1 at t = 1, so the update is -1e-3 / (1 + 1e-8).
  CHECK(params.at("w").value() == doctest::Approx(-0.0009999999900000003).epsilon(1e-15));
  CHECK(state.t == 1);
}

TEST_CASE("zero gradient leaves the parameter unchanged") {
  ModelParams params = single_scalar_param(1.25);
  AdamState state;
  TrainConfig cfg;
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {0.0};
  adam_step(params, grads, state, cfg);
  CHECK(params.at("w").value() == 1.25);  // m = v = 0 -> update exactly 0
  adam_step(params, grads, state, cfg);
  CHECK(params.at("w").value() == 1.25);
}

TEST_CASE("constant gradients approach a steady step of about -lr") {
  ModelParams params = single_scalar_param(0.0);
  AdamState state;
  TrainConfig cfg;
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {0.5};  // constant gradient; m-hat/sqrt(v-hat) -> 1 regardless of size
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    prev = params.at("w").value();
    adam_step(params, grads, state, cfg);
  }
  CHECK(params.at("w").value() - prev == doctest::Approx(-1e-3).epsilon(1e-3));
}

TEST_CASE("adam_step validates the gradient map") {
  ModelParams params = single_scalar_param(0.0);
  AdamState state;
  TrainConfig cfg;
  std::map<std::string, std::vector<double>> grads;
  CHECK_THROWS(adam_step(params, grads, state, cfg));  // missing entry
  grads["w"] = {1.0, 2.0};
  CHECK_THROWS(adam_step(params, grads, state, cfg));  // wrong size
}

TEST_CASE("adam updates are deterministic") {
  auto run = []() {
    ModelParams params = single_scalar_param(0.3);
    AdamState state;
    TrainConfig cfg;
    std::map<std::string, std::vector<double>> grads;
    for (int i = 0; i < 10; ++i) {
      grads["w"] = {0.1 * (i + 1)};
      adam_step(params, grads, state, cfg);
    }
    return params.at("w").value();
  };
  CHECK(run() == run());
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.batch_size = 8;
  cfg.n_workers = 3;  // does not divide 8
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible"), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.beta1 = 1.0;
  CHECK_THROWS(cfg.validate());
}

// ---------------------------------------------------------------------------
// Training loop.

TEST_CASE("training reduces the loss on a learnable task") {
  UNet model(tiny_model_spec(1));
  const TrainData data = linear_blend_data(8, 2, 2);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.steps = 60;
  cfg.learning_rate = 3e-3;
  cfg.checkpoint_every = 20;
  cfg.seed = 3;

  const TrainResult result = train_model(model, data, cfg);
  REQUIRE(result.curve.size() == 60);
  CHECK(result.curve.front().step == 1);
  CHECK(result.curve.back().step == 60);
  CHECK(result.final_train_mse == result.curve.back().train_mse);
  CHECK(result.final_train_mse < result.curve.front().train_mse);
  CHECK(result.best_val_rmse > 0.0);
  CHECK(result.best_step % 20 == 0);

  // Validation points appear exactly on the checkpoint cadence.
  for (const auto& point : result.curve) {
    CHECK(point.has_val == (point.step % 20 == 0));
  }
}

TEST_CASE("training is bitwise reproducible for a fixed seed and worker count") {
  auto run = [](size_t workers) {
    UNet model(tiny_model_spec(5));
    const TrainData data = linear_blend_data(8, 2, 6);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 10;
    cfg.n_workers = workers;
    cfg.seed = 7;
    cfg.checkpoint_every = 5;
    const TrainResult result = train_model(model, data, cfg);
    return std::make_pair(result, std::move(model));
  };

  auto [r1, m1] = run(1);
  auto [r2, m2] = run(1);
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].train_mse == r2.curve[i].train_mse);  // bitwise
    CHECK(r1.curve[i].val_rmse == r2.curve[i].val_rmse);
  }
  CHECK(params_bitwise_equal(m1.params(), m2.params()));
}

TEST_CASE("worker counts agree on the training trajectory to near double precision") {
  auto final_loss = [](size_t workers) {
    UNet model(tiny_model_spec(9));
    const TrainData data = linear_blend_data(8, 0, 10);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 5;
    cfg.n_workers = workers;
    cfg.seed = 11;
    const TrainResult result = train_model(model, data, cfg);
    return result.final_train_mse;
  };
  const double l1 = final_loss(1);
  const double l2 = final_loss(2);
  const double l4 = final_loss(4);
  CHECK(std::abs(l1 - l2) <= 1e-9 * std::max(1.0, std::abs(l1)));
  CHECK(std::abs(l1 - l4) <= 1e-9 * std::max(1.0, std::abs(l1)));
}

TEST_CASE("per-sample gradients averaged across shards match the single-worker sum") {
  // One step with a batch of 4 on identical initial parameters: the adam
  // state after the step is a deterministic function of the averaged
  // gradient, so identical parameters across worker counts certify the
  // reduction order (worker 0..k-1, then divide by the batch size).
  auto params_after_one_step = [](size_t workers) {
    UNet model(tiny_model_spec(13));
    const TrainData data = linear_blend_data(4, 0, 14);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 1;
    cfg.n_workers = workers;
    cfg.seed = 15;
    train_model(model, data, cfg);
    return model;
  };
  UNet m1 = params_after_one_step(1);
  UNet m2 = params_after_one_step(2);
  UNet m4 = params_after_one_step(4);

  for (const auto& name : m1.params().names()) {
    const Tensor& p1 = m1.params().at(name);
    const Tensor& p2 = m2.params().at(name);
    const Tensor& p4 = m4.params().at(name);
    for (size_t i = 0; i < p1.size(); ++i) {
      CHECK(std::abs(p1.data()[i] - p2.data()[i]) <=
            1e-10 * std::max(1.0, std::abs(p1.data()[i])));
      CHECK(std::abs(p1.data()[i] - p4.data()[i]) <=
            1e-10 * std::max(1.0, std::abs(p1.data()[i])));
    }
  }
}

TEST_CASE("a diverging run raises an error naming the step") {
  UNet model(tiny_model_spec(17));
  const TrainData data = linear_blend_data(4, 0, 18);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.steps = 50;
  cfg.learning_rate = 1e200;  // guaranteed overflow within a few steps
  cfg.seed = 19;
  // Release builds report "diverged at step N"; debug builds may flag the
  // non-finite tensor inside an op first. Both are runtime_errors.
  bool threw = false;
  std::string message;
  try {
    train_model(model, data, cfg);
  } catch (const std::runtime_error& e) {
    threw = true;
    message = e.what();
  }
  CHECK(threw);
  CHECK((message.find("diverged at step") != std::string::npos ||
         message.find("non-finite") != std::string::npos));
}

TEST_CASE("the trainer restores the best-validation parameters") {
  UNet model(tiny_model_spec(21));
  const TrainData data = linear_blend_data(8, 2, 22);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.steps = 40;
  cfg.checkpoint_every = 10;
  cfg.seed = 23;
  const TrainResult result = train_model(model, data, cfg);

  // Evaluate the returned parameters on the validation split: their RMSE
  // must reproduce best_val_rmse (that is what "best checkpoint" means).
  double se = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < data.val_inputs.size(); ++i) {
    const Tensor pred = model.forward(nullptr, data.val_inputs[i], /*train=*/false);
    const Tensor& target = data.val_targets[i];
    for (size_t j = 0; j < pred.size(); ++j) {
      const double d = pred.data()[j] - target.data()[j];
      se += d * d;
      ++n;
    }
  }
  const double rmse = std::sqrt(se / double(n));
  CHECK(rmse == doctest::Approx(result.best_val_rmse).epsilon(1e-9));
}

TEST_CASE("write_curve_csv emits the documented format") {
  TempDir tmp("curve");
  std::vector<TrainCurvePoint> curve;
  TrainCurvePoint p1;
  p1.step = 1;
  p1.train_mse = 0.5;
  curve.push_back(p1);
  TrainCurvePoint p2;
  p2.step = 2;
  p2.train_mse = 0.25;
  p2.has_val = true;
  p2.val_rmse = 0.625;  // exactly representable -> %.17g prints "0.625"
  curve.push_back(p2);

  write_curve_csv(curve, tmp.file("curve.csv"));
  const std::string text = read_text_file(tmp.file("curve.csv"));
  CHECK(text.rfind("step,train_mse,val_rmse\n", 0) == 0);
  CHECK(text.find("\n1,") != std::string::npos);
  // Step 1 has no validation: the final column is blank.
  const size_t line1 = text.find("\n1,");
  const size_t line2 = text.find("\n2,");
  const std::string row1 = text.substr(line1 + 1, line2 - line1 - 1);
  CHECK(row1.back() == ',');
  CHECK(text.find("0.625") != std::string::npos);
}

TEST_CASE("TrainData validation") {
  TrainData data = linear_blend_data(2, 1, 30);
  CHECK_NOTHROW(data.validate());
  data.train_targets.pop_back();
  CHECK_THROWS(data.validate());
  TrainData empty;
  CHECK_THROWS_WITH_AS(empty.validate(), doctest::Contains("empty"), std::invalid_argument);
}
