// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: the four convolution variants, full
// U-Net forward/backward passes at working sizes, the chaotic-ensemble
// generator, spread computation and the optimizer update.

#include <benchmark/benchmark.h>

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spreadnet/grids.hpp"
#include "spreadnet/layers.hpp"
#include "spreadnet/model.hpp"
#include "spreadnet/rng.hpp"
#include "spreadnet/synth.hpp"
#include "spreadnet/train.hpp"

namespace {

using namespace spreadnet;

Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (size_t i = 0; i < t.size(); ++i) t.mutable_data()[i] = scale * rng.gaussian();
  return t;
}

// Working size of the first encoder stage on the full evaluation grid.
constexpr size_t kC = 8, kP = 7, kH = 20, kW = 32;

struct ConvSetup {
  Tensor x, w, b;
  ConvSetup() {
    Rng rng(1);
    x = randn(Shape{kC, kP, kH, kW}, rng);
    w = randn(Shape{kC, kC, 3, 3, 3}, rng, 0.1);
    b = randn(Shape{kC}, rng, 0.1);
  }
};

void bm_conv3d_forward(benchmark::State& state) {
  ConvSetup s;
  for (auto _ : state) {
    Tensor y = conv3d(nullptr, s.x, s.w, s.b);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_conv3d_forward)->Unit(benchmark::kMillisecond);

void bm_conv3d_backward(benchmark::State& state) {
  ConvSetup s;
  for (auto _ : state) {
    Tape tape;
    Tensor x = tape.watch(s.x);
    Tensor w = tape.watch(s.w);
    Tensor b = tape.watch(s.b);
    Tensor y = conv3d(&tape, x, w, b);
    tape.backward(mean(&tape, mul(&tape, y, y)));
    benchmark::DoNotOptimize(tape.gradient(w).data());
  }
}
BENCHMARK(bm_conv3d_backward)->Unit(benchmark::kMillisecond);

void bm_conv_full_forward(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = randn(Shape{kC, kP, kH, kW}, rng);
  const Tensor w = randn(Shape{kP, kC, kC, 3, 3, 3}, rng, 0.1);
  const Tensor b = randn(Shape{kP, kC}, rng, 0.1);
  for (auto _ : state) {
    Tensor y = conv_full(nullptr, x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_conv_full_forward)->Unit(benchmark::kMillisecond);

void bm_conv_affine_forward(benchmark::State& state) {
  ConvSetup s;
  Rng rng(3);
  const Tensor scale = randn(Shape{kC, kP}, rng, 0.1);
  const Tensor shift = randn(Shape{kC, kP}, rng, 0.1);
  for (auto _ : state) {
    Tensor y = affine_level(nullptr, conv3d(nullptr, s.x, s.w, s.b), scale, shift);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_conv_affine_forward)->Unit(benchmark::kMillisecond);

void bm_conv_separable_forward(benchmark::State& state) {
  Rng rng(4);
  const Tensor x = randn(Shape{kC, kP, kH, kW}, rng);
  const Tensor horiz = randn(Shape{kC, kC, 3, 3}, rng, 0.1);
  const Tensor vert = randn(Shape{kC, kC, 3}, rng, 0.1);
  const Tensor b = randn(Shape{kC}, rng, 0.1);
  for (auto _ : state) {
    Tensor y = conv_separable(nullptr, x, horiz, vert, b);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_conv_separable_forward)->Unit(benchmark::kMillisecond);

// Full network passes. base 8 / depth 2 / 18 input channels is the
// configuration trained on the full grid; base 8 / depth 1 on a 12x16 grid
// is the small overfitting configuration.
ModelSpec bench_spec(size_t base, size_t depth) {
  ModelSpec spec;
  spec.in_channels = 18;
  spec.out_channels = 1;
  spec.base_channels = base;
  spec.depth = depth;
  spec.n_levels = kP;
  spec.seed = 5;
  return spec;
}

void bm_unet_forward_full(benchmark::State& state) {
  UNet model(bench_spec(8, 2));
  Rng rng(6);
  const Tensor x = randn(Shape{18, kP, kH, kW}, rng);
  for (auto _ : state) {
    Tensor y = model.forward(nullptr, x, /*train=*/true);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_unet_forward_full)->Unit(benchmark::kMillisecond);

void bm_unet_train_step_full(benchmark::State& state) {
  UNet model(bench_spec(8, 2));
  Rng rng(7);
  const Tensor x = randn(Shape{18, kP, kH, kW}, rng);
  const Tensor target = randn(Shape{1, kP, kH, kW}, rng);
  for (auto _ : state) {
    Tape tape;
    std::vector<std::pair<std::string, Tensor>> watched;
    Tensor pred = model.forward(&tape, x, /*train=*/true, nullptr, &watched);
    tape.backward(mse_loss(&tape, pred, target));
    benchmark::DoNotOptimize(tape.gradient(watched.front().second).data());
  }
}
BENCHMARK(bm_unet_train_step_full)->Unit(benchmark::kMillisecond);

void bm_unet_train_step_small(benchmark::State& state) {
  UNet model(bench_spec(8, 1));
  Rng rng(8);
  const Tensor x = randn(Shape{18, kP, 12, 16}, rng);
  const Tensor target = randn(Shape{1, kP, 12, 16}, rng);
  for (auto _ : state) {
    Tape tape;
    std::vector<std::pair<std::string, Tensor>> watched;
    Tensor pred = model.forward(&tape, x, /*train=*/true, nullptr, &watched);
    tape.backward(mse_loss(&tape, pred, target));
    benchmark::DoNotOptimize(tape.gradient(watched.front().second).data());
  }
}
BENCHMARK(bm_unet_train_step_small)->Unit(benchmark::kMillisecond);

// Data generation and spread statistics on the full grid.
void bm_generate_ensemble(benchmark::State& state) {
  GenConfig cfg;
  cfg.spec = std::make_shared<const GridSpec>(GridSpec::desk_default());
  cfg.seed = 9;
  uint64_t sample = 0;
  for (auto _ : state) {
    EnsembleSample s = generate_ensemble(cfg, sample++);
    benchmark::DoNotOptimize(s.members.back().back().values().data());
  }
}
BENCHMARK(bm_generate_ensemble)->Unit(benchmark::kMillisecond);

void bm_ensemble_spread(benchmark::State& state) {
  GridSpecPtr spec = std::make_shared<const GridSpec>(GridSpec::desk_default());
  Rng rng(10);
  std::vector<Field> fields;
  for (int m = 0; m < 10; ++m) {
    Field f(spec);
    for (double& v : f.values()) v = rng.gaussian();
    fields.push_back(std::move(f));
  }
  for (auto _ : state) {
    Field s = ensemble_spread(fields);
    benchmark::DoNotOptimize(s.values().data());
  }
}
BENCHMARK(bm_ensemble_spread)->Unit(benchmark::kMillisecond);

void bm_adam_step(benchmark::State& state) {
  UNet model(bench_spec(8, 2));
  AdamState adam;
  TrainConfig cfg;
  Rng rng(11);
  std::map<std::string, std::vector<double>> grads;
  for (const auto& name : model.params().names()) {
    std::vector<double> g(model.params().at(name).size());
    for (double& v : g) v = 0.01 * rng.gaussian();
    grads[name] = std::move(g);
  }
  for (auto _ : state) {
    adam_step(model.params(), grads, adam, cfg);
    benchmark::DoNotOptimize(model.params().at(model.params().names().front()).data());
  }
}
BENCHMARK(bm_adam_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
