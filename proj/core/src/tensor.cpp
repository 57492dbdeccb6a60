// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace spreadnet {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      s += ",";
    }
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) {
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (data_->size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(data_->size()) +
                                " values do not fill shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double value) {
  return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::full(Shape shape, double value) {
  const size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

double* Tensor::mutable_data() {
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<double>>(*data_);
  }
  return data_->data();
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("tensor: value() on non-scalar shape " +
                                shape_to_string(shape_));
  }
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<size_t> index) const {
  if (index.size() != shape_.size()) {
    throw std::invalid_argument("tensor: index rank " + std::to_string(index.size()) +
                                " vs shape " + shape_to_string(shape_));
  }
  size_t flat = 0;
  size_t axis = 0;
  for (size_t i : index) {
    if (i >= shape_[axis]) {
      throw std::out_of_range("tensor: index out of range on axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

Tensor Tensor::with_node(int node) const {
  Tensor t = *this;
  t.node_ = node;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

void Tensor::require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace spreadnet
