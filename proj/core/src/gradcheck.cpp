// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spreadnet/layers.hpp"
#include "spreadnet/model.hpp"
#include "spreadnet/ops.hpp"
#include "spreadnet/rng.hpp"
#include "spreadnet/tape.hpp"

namespace spreadnet {

namespace {

Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  double* d = t.mutable_data();
  for (size_t i = 0; i < t.size(); ++i) d[i] = scale * rng.gaussian();
  return t;
}

/// Distinct values with pairwise gaps of at least 2/numel, so +-eps
/// perturbations can never change which window element is maximal.
Tensor rand_distinct(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::vector<double> levels(t.size());
  for (size_t i = 0; i < levels.size(); ++i) {
    levels[i] = -1.0 + 2.0 * (double(i) + 0.5) / double(levels.size());
  }
  shuffle(levels, rng);
  std::copy(levels.begin(), levels.end(), t.mutable_data());
  return t;
}

/// Scalar readout: projection onto a fixed random direction. A projection is
/// linear in y, so central differences carry no truncation term through the
/// linear layers, and the probe keeps every leaf's gradient entries away from
/// the cancellation-prone near-zero regime that mean(y*y) can produce.
Tensor project(Tape& tape, const Tensor& y, const Tensor& probe) {
  return mean(&tape, mul(&tape, y, probe));
}

using Fn = std::function<Tensor(Tape&, const Tensor&)>;

/// Step sizes: the projected readout is exactly linear through the purely
/// linear layers, so a large step carries no truncation error and suppresses
/// floating-point cancellation; curved layers stay near the usual optimum.
constexpr double kLinearEps = 1e-2;
constexpr double kCurvedEps = 5e-5;

/// Max grad_check error over one op's differentiable arguments: each entry
/// fixes every other argument and checks against the one named.
double max_over_args(const std::vector<Fn>& fns, const std::vector<Tensor>& args,
                     double eps) {
  double worst = 0.0;
  for (size_t i = 0; i < fns.size(); ++i) {
    worst = std::max(worst, grad_check(fns[i], args[i], eps));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckResult> run_layer_grad_checks(uint64_t seed) {
  std::vector<GradCheckResult> results;
  auto record = [&](const std::string& layer, double err, double threshold = 1e-6) {
    results.push_back({layer, err, threshold});
  };

  {
    Rng rng = Rng::derive(seed, 1);
    const Tensor x = randn(Shape{2, 3, 4, 5}, rng);
    const Tensor w = randn(Shape{2, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b = randn(Shape{2}, rng, 0.3);
    const Tensor p = randn(conv3d(nullptr, x, w, b).shape(), rng);
    record("conv3d",
           max_over_args({[&](Tape& t, const Tensor& v) { return project(t, conv3d(&t, v, w, b), p); },
                          [&](Tape& t, const Tensor& v) { return project(t, conv3d(&t, x, v, b), p); },
                          [&](Tape& t, const Tensor& v) { return project(t, conv3d(&t, x, w, v), p); }},
                         {x, w, b}, kLinearEps));
  }
  {
    Rng rng = Rng::derive(seed, 2);
    const Tensor x = randn(Shape{2, 3, 4, 5}, rng);
    const Tensor w = randn(Shape{3, 2, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b = randn(Shape{3, 2}, rng, 0.3);
    const Tensor p = randn(conv_full(nullptr, x, w, b).shape(), rng);
    record("conv_full",
           max_over_args({[&](Tape& t, const Tensor& v) { return project(t, conv_full(&t, v, w, b), p); },
                          [&](Tape& t, const Tensor& v) { return project(t, conv_full(&t, x, v, b), p); },
                          [&](Tape& t, const Tensor& v) { return project(t, conv_full(&t, x, w, v), p); }},
                         {x, w, b}, kLinearEps));
  }
  {
    Rng rng = Rng::derive(seed, 3);
    const Tensor x = randn(Shape{2, 3, 4, 5}, rng);
    const Tensor scale = randn(Shape{2, 3}, rng);
    const Tensor shift = randn(Shape{2, 3}, rng);
    const Tensor p = randn(x.shape(), rng);
    record("affine_level",
           max_over_args(
               {[&](Tape& t, const Tensor& v) { return project(t, affine_level(&t, v, scale, shift), p); },
                [&](Tape& t, const Tensor& v) { return project(t, affine_level(&t, x, v, shift), p); },
                [&](Tape& t, const Tensor& v) { return project(t, affine_level(&t, x, scale, v), p); }},
               {x, scale, shift}, kLinearEps));
  }
  {
    Rng rng = Rng::derive(seed, 4);
    const Tensor x = randn(Shape{2, 3, 4, 5}, rng);
    const Tensor horiz = randn(Shape{2, 2, 3, 3}, rng, 0.3);
    const Tensor vert = randn(Shape{2, 2, 3}, rng, 0.3);
    const Tensor b = randn(Shape{2}, rng, 0.3);
    const Tensor p = randn(conv_separable(nullptr, x, horiz, vert, b).shape(), rng);
    record("conv_separable",
           max_over_args(
               {[&](Tape& t, const Tensor& v) { return project(t, conv_separable(&t, v, horiz, vert, b), p); },
                [&](Tape& t, const Tensor& v) { return project(t, conv_separable(&t, x, v, vert, b), p); },
                [&](Tape& t, const Tensor& v) { return project(t, conv_separable(&t, x, horiz, v, b), p); },
                [&](Tape& t, const Tensor& v) { return project(t, conv_separable(&t, x, horiz, vert, v), p); }},
               {x, horiz, vert, b}, kLinearEps));
  }
  {
    Rng rng = Rng::derive(seed, 5);
    const Tensor x = rand_distinct(Shape{2, 2, 4, 6}, rng);
    const Tensor p = randn(maxpool3d(nullptr, x).shape(), rng);
    record("maxpool3d",
           grad_check([&](Tape& t, const Tensor& v) { return project(t, maxpool3d(&t, v), p); }, x,
                      5e-3));
  }
  {
    Rng rng = Rng::derive(seed, 6);
    const Tensor x = randn(Shape{2, 2, 3, 4}, rng);
    const Tensor p = randn(upsample3d(nullptr, x).shape(), rng);
    record("upsample3d",
           grad_check([&](Tape& t, const Tensor& v) { return project(t, upsample3d(&t, v), p); }, x,
                      kLinearEps));
  }
  {
    Rng rng = Rng::derive(seed, 7);
    const Tensor x = randn(Shape{3, 2, 4, 4}, rng);
    const Tensor gamma = randn(Shape{3}, rng);
    const Tensor beta = randn(Shape{3}, rng, 0.3);
    const Tensor p = randn(x.shape(), rng);
    auto bn = [&p](Tape& t, const Tensor& v, const Tensor& g, const Tensor& b) {
      return project(t, batchnorm(&t, v, g, b, /*train=*/true, nullptr), p);
    };
    record("batchnorm",
           max_over_args({[&](Tape& t, const Tensor& v) { return bn(t, v, gamma, beta); },
                          [&](Tape& t, const Tensor& v) { return bn(t, x, v, beta); },
                          [&](Tape& t, const Tensor& v) { return bn(t, x, gamma, v); }},
                         {x, gamma, beta}, kCurvedEps));
  }
  {
    Rng rng = Rng::derive(seed, 8);
    // Gentle scales keep the gate pre-activations out of the saturated
    // sigmoid/tanh tails, where tiny true gradients would let the finite
    // difference's truncation term dominate the relative error.
    const Tensor x = randn(Shape{2, 2, 3, 4}, rng, 0.6);
    const Tensor h = randn(Shape{3, 2, 3, 4}, rng, 0.6);
    const Tensor c = randn(Shape{3, 2, 3, 4}, rng, 0.6);
    ConvLstmWeights w;
    for (int k = 0; k < 4; ++k) {
      w.wx[k] = randn(Shape{3, 2, 3, 3, 3}, rng, 0.12);
      w.wh[k] = randn(Shape{3, 3, 3, 3, 3}, rng, 0.12);
      w.bias[k] = randn(Shape{3}, rng, 0.2);
    }
    const Tensor ph = randn(h.shape(), rng);
    const Tensor pc = randn(c.shape(), rng);
    auto run = [&](Tape& t, const Tensor& xt, const Tensor& ht, const Tensor& ct,
                   const ConvLstmWeights& wt) {
      auto [h_t, c_t] = convlstm_cell(&t, xt, ht, ct, wt);
      return add(&t, project(t, h_t, ph), project(t, c_t, pc));
    };
    double worst =
        grad_check([&](Tape& t, const Tensor& v) { return run(t, v, h, c, w); }, x, kCurvedEps);
    worst = std::max(worst, grad_check(
                                [&](Tape& t, const Tensor& v) { return run(t, x, v, c, w); }, h,
                                kCurvedEps));
    worst = std::max(worst, grad_check(
                                [&](Tape& t, const Tensor& v) { return run(t, x, h, v, w); }, c,
                                kCurvedEps));
    worst = std::max(worst, grad_check(
                                [&](Tape& t, const Tensor& v) {
                                  ConvLstmWeights wt = w;
                                  wt.wx[0] = v;
                                  return run(t, x, h, c, wt);
                                },
                                w.wx[0], kCurvedEps));
    worst = std::max(worst, grad_check(
                                [&](Tape& t, const Tensor& v) {
                                  ConvLstmWeights wt = w;
                                  wt.bias[1] = v;
                                  return run(t, x, h, c, wt);
                                },
                                w.bias[1], kCurvedEps));
    record("convlstm_cell", worst);
  }
  {
    Rng rng = Rng::derive(seed, 9);
    ModelSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 1;
    spec.base_channels = 2;
    spec.depth = 1;
    spec.n_levels = 2;
    spec.seed = seed ^ 0x9e3779b97f4a7c15ull;
    UNet model(spec);
    const Tensor x = randn(Shape{2, 2, 4, 4}, rng);
    const Tensor p = randn(Shape{1, 2, 4, 4}, rng);
    auto f = [&](Tape& t, const Tensor& v) {
      std::vector<BatchNormStats> captured;
      return project(t, model.forward(&t, v, /*train=*/true, &captured), p);
    };
    record("unet", grad_check(f, x), 1e-5);
  }
  return results;
}

}  // namespace spreadnet
