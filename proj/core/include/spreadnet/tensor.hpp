// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace spreadnet {

using Shape = std::vector<size_t>;

std::string shape_to_string(const Shape& shape);
size_t shape_numel(const Shape& shape);

/// Dense row-major N-axis double tensor with copy-on-write storage. A tensor
/// may carry a tape node handle (node() >= 0) when it participates in a
/// gradient-tracked computation; see tape.hpp.
///
/// Rank 0 (shape {}) is a scalar with one element.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_->size(); }
  size_t dim(size_t axis) const { return shape_.at(axis); }

  const double* data() const { return data_->data(); }
  /// Clones the buffer first if it is shared. Mutating a tensor that has
  /// already been captured by a tape node therefore cannot corrupt the tape.
  double* mutable_data();

  double value() const;  // scalar tensors only
  double at(std::initializer_list<size_t> index) const;

  int node() const { return node_; }
  bool tracked() const { return node_ >= 0; }
  Tensor with_node(int node) const;
  Tensor detached() const { return with_node(-1); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Throws std::invalid_argument naming `op` and both shapes.
  static void require_same_shape(const char* op, const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  int node_ = -1;
};

}  // namespace spreadnet
