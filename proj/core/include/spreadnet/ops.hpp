// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <utility>
#include <vector>

#include "spreadnet/tape.hpp"
#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// Differentiable primitives. Every function computes eagerly and, when
/// `tape` is non-null and at least one input is tracked, records a backward
/// node on the tape. Pass tape = nullptr for inference-only evaluation.
///
/// add/sub/mul broadcast the smaller operand when its shape is a suffix of
/// the larger one's (the smaller tensor repeats over the leading axes);
/// rank-0 scalars broadcast against anything.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

/// 2-D matrix product: [m][k] x [k][n] -> [m][n].
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

Tensor relu(Tape* tape, const Tensor& x);     // subgradient at 0 is 0
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor tanh(Tape* tape, const Tensor& x);

Tensor sum(Tape* tape, const Tensor& x);   // -> rank-0 scalar
Tensor mean(Tape* tape, const Tensor& x);  // -> rank-0 scalar

/// Max over non-overlapping windows covering the last three axes, which must
/// be divisible by the window extents. Gradient flows to the first maximal
/// element of each window in row-major order.
Tensor maxpool(Tape* tape, const Tensor& x, const std::array<size_t, 3>& window);

/// Zero padding; pads[i] = {before, after} for axis i (one entry per axis).
Tensor pad(Tape* tape, const Tensor& x,
           const std::vector<std::pair<size_t, size_t>>& pads);

/// Contiguous sub-block: starts/sizes give one entry per axis.
Tensor slice(Tape* tape, const Tensor& x, const std::vector<size_t>& starts,
             const Shape& sizes);

/// Concatenation along `axis`; parts must agree on every other axis.
Tensor concat(Tape* tape, const std::vector<Tensor>& parts, size_t axis);

/// Same data, new shape (element count preserved).
Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape);

/// y = scale * x + shift with plain double constants.
Tensor scale_shift(Tape* tape, const Tensor& x, double scale, double shift);

}  // namespace spreadnet
