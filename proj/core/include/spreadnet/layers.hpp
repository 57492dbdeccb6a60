// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spreadnet/ops.hpp"
#include "spreadnet/rng.hpp"
#include "spreadnet/tape.hpp"
#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// The four spatial-convolution variants. All are stride-1, zero-padded to
/// keep the output grid equal to the input grid ("same" padding):
///  - Standard:  one [C_out][C_in][kd][kh][kw] kernel shared everywhere.
///  - Full:      a distinct standard kernel per output level (depth-unshared).
///  - Affine:    standard convolution followed by a learned per-(channel,
///               level) scale and shift.
///  - Separable: shared per-level 2-D convolution, then a channel-mixing 1-D
///               convolution along the level axis.
enum class ConvVariant { kStandard, kFull, kAffine, kSeparable };

const char* conv_variant_name(ConvVariant variant);
ConvVariant parse_conv_variant(const std::string& name);

struct ConvSpec {
  size_t in_channels = 1;
  size_t out_channels = 1;
  size_t k_depth = 3;
  size_t k_lat = 3;
  size_t k_lon = 3;
  ConvVariant variant = ConvVariant::kStandard;

  void validate() const;  // odd kernel extents, counts >= 1
};

/// Learnable parameter count of one convolution block with the given spec on
/// a grid with n_levels pressure levels:
///   standard:  kd*kh*kw*C_in*C_out + C_out
///   full:      n_levels * (kd*kh*kw*C_in*C_out + C_out)
///   affine:    standard + 2*C_out*n_levels
///   separable: kh*kw*C_in*C_out + kd*C_out*C_out + C_out
size_t conv_param_count(const ConvSpec& spec, size_t n_levels);

/// 3-D cross-correlation (no kernel flip), stride 1, zero "same" padding.
/// x [C_in][P][H][W], weights [C_out][C_in][kd][kh][kw], bias [C_out]
/// -> [C_out][P][H][W].
Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& weights, const Tensor& bias);

/// Depth-unshared convolution: output level p is computed with kernel set p
/// over the same zero-padded window conv3d uses.
/// weights [P][C_out][C_in][kd][kh][kw], bias [P][C_out].
Tensor conv_full(Tape* tape, const Tensor& x, const Tensor& weights, const Tensor& bias);

/// y[c][p][h][w] = scale[c][p] * x[c][p][h][w] + shift[c][p].
Tensor affine_level(Tape* tape, const Tensor& x, const Tensor& scale, const Tensor& shift);

/// Per-level shared 2-D convolution (horiz [C_out][C_in][kh][kw], no bias)
/// followed by a channel-mixing 1-D convolution along the level axis
/// (vert [C_out][C_out][kd]) plus bias [C_out]. Zero padding in both stages.
Tensor conv_separable(Tape* tape, const Tensor& x, const Tensor& horiz,
                      const Tensor& vert, const Tensor& bias);

/// Max over non-overlapping (1,2,2) windows: level axis untouched, lat/lon
/// halved (they must be even). Ties give their gradient to the first maximal
/// element in row-major order.
Tensor maxpool3d(Tape* tape, const Tensor& x);

/// Nearest-neighbor upsampling by (1,2,2): level axis untouched, lat/lon
/// doubled.
Tensor upsample3d(Tape* tape, const Tensor& x);

/// Per-channel running statistics owned by the model, updated only by the
/// training loop's single writer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
};

/// Batch statistics of one forward pass, exported so a trainer can apply
/// running-stat updates in a deterministic sample order of its choosing.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch normalization over (N, P, H, W) per channel.
/// x is [N][C][P][H][W]; a rank-4 [C][P][H][W] input is treated as N = 1.
/// gamma/beta are [C].
///
/// train mode: normalizes with batch statistics; if `state` is non-null its
/// running stats receive the EMA update r <- (1-momentum)*r + momentum*batch
/// (first update copies the batch stats); if `captured` is non-null the batch
/// statistics are written there. eval mode: requires an initialized `state`
/// and normalizes with its running stats.
Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 bool train, BatchNormState* state, BatchNormStats* captured = nullptr,
                 double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

/// The EMA update batchnorm applies internally, exposed for trainers that
/// capture stats from concurrent forwards and apply them in batch order.
void batchnorm_update(BatchNormState& state, const BatchNormStats& stats,
                      double momentum = kBatchNormMomentum);

/// Convolutional LSTM cell without peephole terms. Gate order below is
/// input, forget, output, candidate:
///   i,f,o = sigmoid(conv(x, wx) + conv(h, wh) + b),  g = tanh(...)
///   c_t = f (*) c_prev + i (*) g,  h_t = o (*) tanh(c_t)
/// wx[k] is [C_h][C_in][kd][kh][kw], wh[k] is [C_h][C_h][kd][kh][kw],
/// bias[k] is [C_h]; all convolutions are zero-padded conv3d.
struct ConvLstmWeights {
  std::array<Tensor, 4> wx;
  std::array<Tensor, 4> wh;
  std::array<Tensor, 4> bias;
};

std::pair<Tensor, Tensor> convlstm_cell(Tape* tape, const Tensor& x_t,
                                        const Tensor& h_prev, const Tensor& c_prev,
                                        const ConvLstmWeights& weights);

/// He-uniform initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor he_uniform(const Shape& shape, size_t fan_in, Rng& rng);

}  // namespace spreadnet
