// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace spreadnet {

namespace {

void check_finite_debug(const char* op, const Tensor& t) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    throw std::runtime_error(std::string(op) + ": produced non-finite values");
  }
#else
  (void)op;
  (void)t;
#endif
}

bool recording(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->tracked()) return true;
  }
  return false;
}

/// Attaches a backward closure to `out` when recording. `fn(tape, g)` gets
/// the output gradient buffer and accumulates into the inputs.
template <typename Fn>
Tensor attach(Tape* tape, bool rec, Tensor out, Fn&& fn) {
  if (!rec) return out;
  const int oid = int(tape->node_count());
  tape->push(out.size(), [oid, f = std::forward<Fn>(fn)](Tape& t) {
    const auto* g = t.grad_if_any(oid);
    if (g) f(t, g->data());
  });
  return out.with_node(oid);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_to_string(a.shape()) + " and " +
                              shape_to_string(b.shape()));
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Elementwise binary op with suffix broadcasting. combine(x, y) gives the
/// value, d_big/d_small give the partials w.r.t. the big/small operand (as
/// functions of the two operand values).
struct BroadcastPlan {
  bool a_is_big = true;
  size_t lead = 1;     // number of repeats of the small operand
  size_t small_n = 1;  // elements in the small operand
};

BroadcastPlan plan_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan;
  if (a.same_shape(b)) {
    plan.a_is_big = true;
    plan.lead = 1;
    plan.small_n = a.size();
    return plan;
  }
  if (is_suffix(a.shape(), b.shape())) {
    plan.a_is_big = true;
    plan.small_n = b.size();
  } else if (is_suffix(b.shape(), a.shape())) {
    plan.a_is_big = false;
    plan.small_n = a.size();
  } else {
    shape_error(op, a, b);
  }
  const size_t big_n = plan.a_is_big ? a.size() : b.size();
  if (plan.small_n == 0) shape_error(op, a, b);
  plan.lead = big_n / plan.small_n;
  return plan;
}

Tensor unary_pointwise(const char* op, Tape* tape, const Tensor& x, double (*f)(double),
                       double (*dfdy)(double) /* derivative in terms of OUTPUT */) {
  Tensor out(x.shape());
  const double* xv = x.data();
  double* ov = out.mutable_data();
  for (size_t i = 0; i < x.size(); ++i) ov[i] = f(xv[i]);
  check_finite_debug(op, out);

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const Tensor saved = out;  // CoW handle for the backward pass
  return attach(tape, rec, std::move(out), [ix, saved, dfdy](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    const double* ov = saved.data();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdy(ov[i]);
  });
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const BroadcastPlan p = plan_broadcast("add", a, b);
  const Tensor& big = p.a_is_big ? a : b;
  const Tensor& small = p.a_is_big ? b : a;
  Tensor out(big.shape());
  const double* bv = big.data();
  const double* sv = small.data();
  double* ov = out.mutable_data();
  for (size_t l = 0, i = 0; l < p.lead; ++l) {
    for (size_t j = 0; j < p.small_n; ++j, ++i) ov[i] = bv[i] + sv[j];
  }
  check_finite_debug("add", out);

  const bool rec = recording(tape, {&a, &b});
  const int ibig = big.node(), ismall = small.node();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ibig >= 0) t.accumulate(ibig, g, p.lead * p.small_n);
    if (ismall >= 0) {
      auto& gs = t.grad_buffer(ismall);
      for (size_t l = 0, i = 0; l < p.lead; ++l) {
        for (size_t j = 0; j < p.small_n; ++j, ++i) gs[j] += g[i];
      }
    }
  });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  const BroadcastPlan p = plan_broadcast("sub", a, b);
  Tensor out(p.a_is_big ? a.shape() : b.shape());
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.mutable_data();
  if (p.a_is_big) {
    for (size_t l = 0, i = 0; l < p.lead; ++l) {
      for (size_t j = 0; j < p.small_n; ++j, ++i) ov[i] = av[i] - bv[j];
    }
  } else {
    for (size_t l = 0, i = 0; l < p.lead; ++l) {
      for (size_t j = 0; j < p.small_n; ++j, ++i) ov[i] = av[j] - bv[i];
    }
  }
  check_finite_debug("sub", out);

  const bool rec = recording(tape, {&a, &b});
  const int ia = a.node(), ib = b.node();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    const size_t n = p.lead * p.small_n;
    if (p.a_is_big) {
      if (ia >= 0) t.accumulate(ia, g, n);
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (size_t l = 0, i = 0; l < p.lead; ++l) {
          for (size_t j = 0; j < p.small_n; ++j, ++i) gb[j] -= g[i];
        }
      }
    } else {
      if (ia >= 0) {
        auto& ga = t.grad_buffer(ia);
        for (size_t l = 0, i = 0; l < p.lead; ++l) {
          for (size_t j = 0; j < p.small_n; ++j, ++i) ga[j] += g[i];
        }
      }
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    }
  });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  const BroadcastPlan p = plan_broadcast("mul", a, b);
  const Tensor& big = p.a_is_big ? a : b;
  const Tensor& small = p.a_is_big ? b : a;
  Tensor out(big.shape());
  const double* bv = big.data();
  const double* sv = small.data();
  double* ov = out.mutable_data();
  for (size_t l = 0, i = 0; l < p.lead; ++l) {
    for (size_t j = 0; j < p.small_n; ++j, ++i) ov[i] = bv[i] * sv[j];
  }
  check_finite_debug("mul", out);

  const bool rec = recording(tape, {&a, &b});
  const int ibig = big.node(), ismall = small.node();
  return attach(tape, rec, std::move(out), [=, big = big.detached(),
                                            small = small.detached()](Tape& t,
                                                                      const double* g) {
    const double* bv = big.data();
    const double* sv = small.data();
    if (ibig >= 0) {
      auto& gb = t.grad_buffer(ibig);
      for (size_t l = 0, i = 0; l < p.lead; ++l) {
        for (size_t j = 0; j < p.small_n; ++j, ++i) gb[i] += g[i] * sv[j];
      }
    }
    if (ismall >= 0) {
      auto& gs = t.grad_buffer(ismall);
      for (size_t l = 0, i = 0; l < p.lead; ++l) {
        for (size_t j = 0; j < p.small_n; ++j, ++i) gs[j] += g[i] * bv[i];
      }
    }
  });
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", a, b);
  }
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.mutable_data();
  std::fill(ov, ov + m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = bv + kk * n;
      double* orow = ov + i * n;
      for (size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  check_finite_debug("matmul", out);

  const bool rec = recording(tape, {&a, &b});
  const int ia = a.node(), ib = b.node();
  return attach(tape, rec, std::move(out),
                [=, a = a.detached(), b = b.detached()](Tape& t, const double* g) {
    const double* av = a.data();
    const double* bv = b.data();
    if (ia >= 0) {
      auto& ga = t.grad_buffer(ia);
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          const double* brow = bv + j;  // b[kk][j] stride n
          for (size_t kk = 0; kk < k; ++kk) ga[i * k + kk] += gij * brow[kk * n];
        }
      }
    }
    if (ib >= 0) {
      auto& gb = t.grad_buffer(ib);
      for (size_t kk = 0; kk < k; ++kk) {
        for (size_t i = 0; i < m; ++i) {
          const double aik = av[i * k + kk];
          const double* grow = g + i * n;
          double* gbrow = gb.data() + kk * n;
          for (size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

Tensor relu(Tape* tape, const Tensor& x) {
  return unary_pointwise(
      "relu", tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  return unary_pointwise(
      "sigmoid", tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape* tape, const Tensor& x) {
  return unary_pointwise(
      "tanh", tape, x, [](double v) { return std::tanh(v); },
      [](double y) { return 1.0 - y * y; });
}

Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  const double* xv = x.data();
  for (size_t i = 0; i < x.size(); ++i) acc += xv[i];
  Tensor out = Tensor::scalar(acc);
  check_finite_debug("sum", out);

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const size_t n = x.size();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    for (size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

Tensor mean(Tape* tape, const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  const double* xv = x.data();
  for (size_t i = 0; i < x.size(); ++i) acc += xv[i];
  Tensor out = Tensor::scalar(acc / double(x.size()));
  check_finite_debug("mean", out);

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const size_t n = x.size();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    const double gper = g[0] / double(n);
    for (size_t i = 0; i < n; ++i) gx[i] += gper;
  });
}

Tensor maxpool(Tape* tape, const Tensor& x, const std::array<size_t, 3>& window) {
  if (x.rank() < 3) {
    throw std::invalid_argument("maxpool: input must have rank >= 3, got shape " +
                                shape_to_string(x.shape()));
  }
  const size_t wd = window[0], wh = window[1], ww = window[2];
  if (wd == 0 || wh == 0 || ww == 0) throw std::invalid_argument("maxpool: zero window");
  const size_t rank = x.rank();
  const size_t D = x.dim(rank - 3), H = x.dim(rank - 2), W = x.dim(rank - 1);
  if (D % wd || H % wh || W % ww) {
    throw std::invalid_argument("maxpool: dims [" + std::to_string(D) + "," +
                                std::to_string(H) + "," + std::to_string(W) +
                                "] not divisible by window [" + std::to_string(wd) +
                                "," + std::to_string(wh) + "," + std::to_string(ww) + "]");
  }
  size_t lead = 1;
  Shape out_shape = x.shape();
  for (size_t i = 0; i + 3 < rank; ++i) lead *= x.dim(i);
  const size_t OD = D / wd, OH = H / wh, OW = W / ww;
  out_shape[rank - 3] = OD;
  out_shape[rank - 2] = OH;
  out_shape[rank - 1] = OW;

  Tensor out(out_shape);
  double* ov = out.mutable_data();
  const double* xv = x.data();
  auto argmax = std::make_shared<std::vector<size_t>>(out.size());
  size_t o = 0;
  for (size_t l = 0; l < lead; ++l) {
    const size_t base_l = l * D * H * W;
    for (size_t od = 0; od < OD; ++od) {
      for (size_t oh = 0; oh < OH; ++oh) {
        for (size_t ow = 0; ow < OW; ++ow, ++o) {
          double best = -1.0;
          size_t best_idx = 0;
          bool first = true;
          for (size_t d = od * wd; d < (od + 1) * wd; ++d) {
            for (size_t h = oh * wh; h < (oh + 1) * wh; ++h) {
              for (size_t w = ow * ww; w < (ow + 1) * ww; ++w) {
                const size_t idx = base_l + (d * H + h) * W + w;
                // Strictly-greater keeps the FIRST maximal element on ties.
                if (first || xv[idx] > best) {
                  best = xv[idx];
                  best_idx = idx;
                  first = false;
                }
              }
            }
          }
          ov[o] = best;
          (*argmax)[o] = best_idx;
        }
      }
    }
  }
  check_finite_debug("maxpool", out);

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const size_t n_out = out.size();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    for (size_t i = 0; i < n_out; ++i) gx[(*argmax)[i]] += g[i];
  });
}

namespace {

std::vector<size_t> row_major_strides(const Shape& shape) {
  std::vector<size_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace

Tensor pad(Tape* tape, const Tensor& x,
           const std::vector<std::pair<size_t, size_t>>& pads) {
  if (pads.size() != x.rank()) {
    throw std::invalid_argument("pad: need one (before,after) pair per axis, got " +
                                std::to_string(pads.size()) + " for shape " +
                                shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  for (size_t i = 0; i < pads.size(); ++i) out_shape[i] += pads[i].first + pads[i].second;

  Tensor out = Tensor::full(out_shape, 0.0);
  const size_t rank = x.rank();
  const auto out_strides = row_major_strides(out_shape);
  const size_t last = rank ? x.dim(rank - 1) : 1;
  const size_t rows = rank ? x.size() / std::max<size_t>(last, 1) : 1;
  double* ov = out.mutable_data();
  const double* xv = x.data();

  std::vector<size_t> idx(rank, 0);
  for (size_t r = 0; r < rows && last > 0; ++r) {
    size_t off = rank ? pads[rank - 1].first : 0;
    for (size_t i = 0; i + 1 < rank; ++i) off += (idx[i] + pads[i].first) * out_strides[i];
    std::memcpy(ov + off, xv + r * last, last * sizeof(double));
    for (size_t i = rank > 0 ? rank - 1 : 0; i-- > 0;) {  // advance leading axes
      if (++idx[i] < x.dim(i)) break;
      idx[i] = 0;
    }
  }

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const Shape x_shape = x.shape();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    std::vector<size_t> idx2(rank, 0);
    for (size_t r = 0; r < rows && last > 0; ++r) {
      size_t off = rank ? pads[rank - 1].first : 0;
      for (size_t i = 0; i + 1 < rank; ++i) off += (idx2[i] + pads[i].first) * out_strides[i];
      for (size_t j = 0; j < last; ++j) gx[r * last + j] += g[off + j];
      for (size_t i = rank > 0 ? rank - 1 : 0; i-- > 0;) {
        if (++idx2[i] < x_shape[i]) break;
        idx2[i] = 0;
      }
    }
  });
}

Tensor slice(Tape* tape, const Tensor& x, const std::vector<size_t>& starts,
             const Shape& sizes) {
  if (starts.size() != x.rank() || sizes.size() != x.rank()) {
    throw std::invalid_argument("slice: starts/sizes must have one entry per axis of " +
                                shape_to_string(x.shape()));
  }
  for (size_t i = 0; i < x.rank(); ++i) {
    if (sizes[i] == 0 || starts[i] + sizes[i] > x.dim(i)) {
      throw std::invalid_argument("slice: axis " + std::to_string(i) + " range [" +
                                  std::to_string(starts[i]) + "," +
                                  std::to_string(starts[i] + sizes[i]) +
                                  ") out of bounds for shape " +
                                  shape_to_string(x.shape()));
    }
  }
  const size_t rank = x.rank();
  Tensor out(sizes);
  const auto x_strides = row_major_strides(x.shape());
  const size_t last = rank ? sizes[rank - 1] : 1;
  const size_t rows = rank ? out.size() / std::max<size_t>(last, 1) : 1;
  double* ov = out.mutable_data();
  const double* xv = x.data();

  std::vector<size_t> idx(rank, 0);
  for (size_t r = 0; r < rows && last > 0; ++r) {
    size_t off = rank ? starts[rank - 1] : 0;
    for (size_t i = 0; i + 1 < rank; ++i) off += (idx[i] + starts[i]) * x_strides[i];
    std::memcpy(ov + r * last, xv + off, last * sizeof(double));
    for (size_t i = rank > 0 ? rank - 1 : 0; i-- > 0;) {
      if (++idx[i] < sizes[i]) break;
      idx[i] = 0;
    }
  }

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const Shape out_sizes = sizes;
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    std::vector<size_t> idx2(rank, 0);
    for (size_t r = 0; r < rows && last > 0; ++r) {
      size_t off = rank ? starts[rank - 1] : 0;
      for (size_t i = 0; i + 1 < rank; ++i) off += (idx2[i] + starts[i]) * x_strides[i];
      for (size_t j = 0; j < last; ++j) gx[off + j] += g[r * last + j];
      for (size_t i = rank > 0 ? rank - 1 : 0; i-- > 0;) {
        if (++idx2[i] < out_sizes[i]) break;
        idx2[i] = 0;
      }
    }
  });
}

Tensor concat(Tape* tape, const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_to_string(first));
  }
  size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", parts[0], p);
    for (size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) shape_error("concat", parts[0], p);
    }
    axis_total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= first[i];
  for (size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  Tensor out(out_shape);
  double* ov = out.mutable_data();
  size_t axis_off = 0;
  for (const Tensor& p : parts) {
    const size_t block = p.dim(axis) * inner;
    const double* pv = p.data();
    for (size_t o = 0; o < outer; ++o) {
      std::memcpy(ov + o * axis_total * inner + axis_off * inner, pv + o * block,
                  block * sizeof(double));
    }
    axis_off += p.dim(axis);
  }

  bool rec = false;
  std::vector<int> ids(parts.size(), -1);
  std::vector<size_t> axis_dims(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    ids[i] = parts[i].node();
    axis_dims[i] = parts[i].dim(axis);
    rec = rec || (tape && parts[i].tracked());
  }
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    size_t off = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
      const size_t block = axis_dims[pi] * inner;
      if (ids[pi] >= 0) {
        auto& gp = t.grad_buffer(ids[pi]);
        for (size_t o = 0; o < outer; ++o) {
          const double* src = g + o * axis_total * inner + off * inner;
          double* dst = gp.data() + o * block;
          for (size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
      off += axis_dims[pi];
    }
  });
}

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) +
                                " as " + shape_to_string(new_shape) +
                                " (element counts differ)");
  }
  Tensor out(new_shape, std::vector<double>(x.data(), x.data() + x.size()));

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const size_t n = x.size();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix >= 0) t.accumulate(ix, g, n);
  });
}

Tensor scale_shift(Tape* tape, const Tensor& x, double scale, double shift) {
  Tensor out(x.shape());
  const double* xv = x.data();
  double* ov = out.mutable_data();
  for (size_t i = 0; i < x.size(); ++i) ov[i] = scale * xv[i] + shift;
  check_finite_debug("scale_shift", out);

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  const size_t n = x.size();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    for (size_t i = 0; i < n; ++i) gx[i] += scale * g[i];
  });
}

}  // namespace spreadnet
