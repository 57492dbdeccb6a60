// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// Reverse-mode tape: an append-only list of nodes in topological order.
/// Leaves (watched parameters/inputs) have no backward function; interior
/// nodes carry a closure that reads the node's gradient buffer and
/// accumulates into its inputs' buffers.
///
/// A tape is single-use: build one forward pass, call backward() once, read
/// gradients. Parameter tensors themselves live outside the tape and are
/// re-watched on every pass. A tape must stay confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  /// Registers a leaf and returns a tracked copy of `t` pointing at it.
  Tensor watch(const Tensor& t);

  /// Appends an interior node; returns its id. `numel` is the node's value
  /// count (gradient buffer size).
  int push(size_t numel, BackwardFn backward);

  /// Gradient buffer of a node, allocated as zeros on first use.
  std::vector<double>& grad_buffer(int node);
  /// Null if the node's gradient was never touched.
  const std::vector<double>* grad_if_any(int node) const;
  void accumulate(int node, const double* g, size_t n);

  /// Reverse accumulation from a scalar tracked loss. Deterministic: nodes
  /// run in strictly decreasing id order.
  void backward(const Tensor& loss);

  /// Gradient of the last backward() w.r.t. a tracked tensor, shaped like it;
  /// zeros if the loss never depended on it.
  Tensor gradient(const Tensor& tracked) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    size_t numel;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<double>>> grads_;
  bool ran_backward_ = false;
};

/// Max relative error between backward gradients and central differences
/// (f(x+eps e_i) - f(x-eps e_i)) / (2 eps), with relative error denominator
/// max(|a|, |b|, 1e-8). `f` is called with a fresh tape every evaluation and
/// must return a scalar tensor. The caller keeps x away from kinks.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps = 1e-5);

}  // namespace spreadnet
