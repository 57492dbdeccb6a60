// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace spreadnet {

Tensor Tape::watch(const Tensor& t) {
  const int id = int(nodes_.size());
  nodes_.push_back(Node{t.size(), nullptr});
  grads_.emplace_back();
  return t.with_node(id);
}

int Tape::push(size_t numel, BackwardFn backward) {
  const int id = int(nodes_.size());
  nodes_.push_back(Node{numel, std::move(backward)});
  grads_.emplace_back();
  return id;
}

std::vector<double>& Tape::grad_buffer(int node) {
  auto& slot = grads_.at(size_t(node));
  if (!slot) slot = std::make_unique<std::vector<double>>(nodes_[size_t(node)].numel, 0.0);
  return *slot;
}

const std::vector<double>* Tape::grad_if_any(int node) const {
  return grads_.at(size_t(node)).get();
}

void Tape::accumulate(int node, const double* g, size_t n) {
  auto& buf = grad_buffer(node);
  if (buf.size() != n) {
    throw std::logic_error("gradient size mismatch on node " + std::to_string(node));
  }
  for (size_t i = 0; i < n; ++i) buf[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked()) throw std::invalid_argument("backward: loss is not tracked");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  if (ran_backward_) throw std::logic_error("backward: tape already consumed");
  ran_backward_ = true;

  grad_buffer(loss.node())[0] = 1.0;
  for (int id = loss.node(); id >= 0; --id) {
    if (!grads_[size_t(id)]) continue;  // nothing flowed here
    if (nodes_[size_t(id)].backward) nodes_[size_t(id)].backward(*this);
  }
}

Tensor Tape::gradient(const Tensor& tracked) const {
  if (!tracked.tracked()) {
    throw std::invalid_argument("gradient: tensor is not tracked on this tape");
  }
  const auto* buf = grad_if_any(tracked.node());
  if (!buf) return Tensor(tracked.shape());  // unused leaf: all zeros
  return Tensor(tracked.shape(), *buf);
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps) {
  Tensor analytic;
  {
    Tape tape;
    Tensor xt = tape.watch(x);
    Tensor loss = f(tape, xt);
    tape.backward(loss);
    analytic = tape.gradient(xt);
  }

  auto eval = [&f](const Tensor& point) {
    Tape tape;
    Tensor loss = f(tape, tape.watch(point));
    if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    return loss.data()[0];
  };

  double max_rel = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    Tensor hi = x;
    Tensor lo = x;
    hi.mutable_data()[i] += eps;
    lo.mutable_data()[i] -= eps;
    const double numeric = (eval(hi) - eval(lo)) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace spreadnet
