// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace spreadnet {

const char* conv_variant_name(ConvVariant variant) {
  switch (variant) {
    case ConvVariant::kStandard: return "standard";
    case ConvVariant::kFull: return "full";
    case ConvVariant::kAffine: return "affine";
    case ConvVariant::kSeparable: return "separable";
  }
  throw std::logic_error("unknown ConvVariant");
}

ConvVariant parse_conv_variant(const std::string& name) {
  if (name == "standard") return ConvVariant::kStandard;
  if (name == "full") return ConvVariant::kFull;
  if (name == "affine") return ConvVariant::kAffine;
  if (name == "separable") return ConvVariant::kSeparable;
  throw std::invalid_argument("unknown convolution variant '" + name +
                              "' (expected standard, full, affine, or separable)");
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("ConvSpec: channel counts must be >= 1");
  }
  if (k_depth % 2 == 0 || k_lat % 2 == 0 || k_lon % 2 == 0 || k_depth == 0) {
    throw std::invalid_argument("ConvSpec: kernel extents must be odd, got (" +
                                std::to_string(k_depth) + "," + std::to_string(k_lat) +
                                "," + std::to_string(k_lon) + ")");
  }
}

size_t conv_param_count(const ConvSpec& spec, size_t n_levels) {
  spec.validate();
  const size_t k = spec.k_depth * spec.k_lat * spec.k_lon;
  const size_t standard = k * spec.in_channels * spec.out_channels + spec.out_channels;
  switch (spec.variant) {
    case ConvVariant::kStandard:
      return standard;
    case ConvVariant::kFull:
      return n_levels * standard;
    case ConvVariant::kAffine:
      return standard + 2 * spec.out_channels * n_levels;
    case ConvVariant::kSeparable:
      return spec.k_lat * spec.k_lon * spec.in_channels * spec.out_channels +
             spec.k_depth * spec.out_channels * spec.out_channels + spec.out_channels;
  }
  throw std::logic_error("unknown ConvVariant");
}

namespace {

[[noreturn]] void layer_shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_to_string(a.shape()) + " and " +
                              shape_to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, size_t rank) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + " tensor, got shape " +
                                shape_to_string(t.shape()));
  }
}

void require_odd_kernel(const char* op, size_t kd, size_t kh, size_t kw) {
  if (kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument(std::string(op) + ": kernel extents must be odd, got (" +
                                std::to_string(kd) + "," + std::to_string(kh) + "," +
                                std::to_string(kw) + ")");
  }
}

/// dst(p,h,w) += s * src(p+dd, h+dh, w+dw) over in-bounds shifted points;
/// both planes are [P][H][W]. Shifts outside the volume contribute nothing,
/// which is exactly zero "same" padding.
inline void axpy_shifted(double* dst, const double* src, double s, long P, long H,
                         long W, long dd, long dh, long dw) {
  const long p0 = std::max(0L, -dd), p1 = P - std::max(0L, dd);
  const long h0 = std::max(0L, -dh), h1 = H - std::max(0L, dh);
  const long w0 = std::max(0L, -dw), w1 = W - std::max(0L, dw);
  for (long p = p0; p < p1; ++p) {
    for (long h = h0; h < h1; ++h) {
      double* drow = dst + (p * H + h) * W;
      const double* srow = src + ((p + dd) * H + (h + dh)) * W + dw;
      for (long w = w0; w < w1; ++w) drow[w] += s * srow[w];
    }
  }
}

/// sum of a(p,h,w) * b(p+dd, h+dh, w+dw) over the same in-bounds region.
inline double dot_shifted(const double* a, const double* b, long P, long H, long W,
                          long dd, long dh, long dw) {
  const long p0 = std::max(0L, -dd), p1 = P - std::max(0L, dd);
  const long h0 = std::max(0L, -dh), h1 = H - std::max(0L, dh);
  const long w0 = std::max(0L, -dw), w1 = W - std::max(0L, dw);
  double acc = 0.0;
  for (long p = p0; p < p1; ++p) {
    for (long h = h0; h < h1; ++h) {
      const double* arow = a + (p * H + h) * W;
      const double* brow = b + ((p + dd) * H + (h + dh)) * W + dw;
      for (long w = w0; w < w1; ++w) acc += arow[w] * brow[w];
    }
  }
  return acc;
}

/// 2-D (single level plane) versions of the same helpers.
inline void axpy_shifted2(double* dst, const double* src, double s, long H, long W,
                          long dh, long dw) {
  axpy_shifted(dst, src, s, 1, H, W, 0, dh, dw);
}

inline double dot_shifted2(const double* a, const double* b, long H, long W, long dh,
                           long dw) {
  return dot_shifted(a, b, 1, H, W, 0, dh, dw);
}

bool recording(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->tracked()) return true;
  }
  return false;
}

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

}  // namespace

Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank("conv3d", x, 4);
  require_rank("conv3d", weights, 5);
  require_rank("conv3d", bias, 1);
  if (weights.dim(1) != x.dim(0)) layer_shape_error("conv3d", x, weights);
  if (bias.dim(0) != weights.dim(0)) layer_shape_error("conv3d", weights, bias);
  const long Ci = long(x.dim(0)), P = long(x.dim(1)), H = long(x.dim(2)),
             W = long(x.dim(3));
  const long Co = long(weights.dim(0)), kd = long(weights.dim(2)),
             kh = long(weights.dim(3)), kw = long(weights.dim(4));
  require_odd_kernel("conv3d", size_t(kd), size_t(kh), size_t(kw));
  const long cd = kd / 2, ch = kh / 2, cw = kw / 2;
  const long plane = P * H * W;

  Tensor out(Shape{size_t(Co), size_t(P), size_t(H), size_t(W)});
  double* ov = out.mutable_data();
  const double* xv = x.data();
  const double* wv = weights.data();
  const double* bv = bias.data();

  for (long co = 0; co < Co; ++co) {
    std::fill(ov + co * plane, ov + (co + 1) * plane, bv[co]);
    for (long ci = 0; ci < Ci; ++ci) {
      const double* wk = wv + (co * Ci + ci) * kd * kh * kw;
      for (long d = 0; d < kd; ++d) {
        for (long h = 0; h < kh; ++h) {
          for (long w = 0; w < kw; ++w) {
            axpy_shifted(ov + co * plane, xv + ci * plane,
                         wk[(d * kh + h) * kw + w], P, H, W, d - cd, h - ch, w - cw);
          }
        }
      }
    }
  }

  const bool rec = recording(tape, {&x, &weights, &bias});
  const int ix = x.node(), iw = weights.node(), ib = bias.node();
  return attach(tape, rec, std::move(out),
                [=, x = x.detached(), weights = weights.detached()](Tape& t,
                                                                    const double* g) {
    const double* xv = x.data();
    const double* wv = weights.data();
    if (ib >= 0) {
      auto& gb = t.grad_buffer(ib);
      for (long co = 0; co < Co; ++co) {
        double acc = 0.0;
        const double* gpl = g + co * plane;
        for (long i = 0; i < plane; ++i) acc += gpl[i];
        gb[size_t(co)] += acc;
      }
    }
    if (iw >= 0) {
      auto& gw = t.grad_buffer(iw);
      for (long co = 0; co < Co; ++co) {
        for (long ci = 0; ci < Ci; ++ci) {
          double* gwk = gw.data() + (co * Ci + ci) * kd * kh * kw;
          for (long d = 0; d < kd; ++d) {
            for (long h = 0; h < kh; ++h) {
              for (long w = 0; w < kw; ++w) {
                gwk[(d * kh + h) * kw + w] += dot_shifted(
                    g + co * plane, xv + ci * plane, P, H, W, d - cd, h - ch, w - cw);
              }
            }
          }
        }
      }
    }
    if (ix >= 0) {
      auto& gx = t.grad_buffer(ix);
      for (long co = 0; co < Co; ++co) {
        for (long ci = 0; ci < Ci; ++ci) {
          const double* wk = wv + (co * Ci + ci) * kd * kh * kw;
          for (long d = 0; d < kd; ++d) {
            for (long h = 0; h < kh; ++h) {
              for (long w = 0; w < kw; ++w) {
                axpy_shifted(gx.data() + ci * plane, g + co * plane,
                             wk[(d * kh + h) * kw + w], P, H, W, cd - d, ch - h,
                             cw - w);
              }
            }
          }
        }
      }
    }
  });
}

Tensor conv_full(Tape* tape, const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank("conv_full", x, 4);
  require_rank("conv_full", weights, 6);
  require_rank("conv_full", bias, 2);
  if (weights.dim(0) != x.dim(1) || weights.dim(2) != x.dim(0)) {
    layer_shape_error("conv_full", x, weights);
  }
  if (bias.dim(0) != weights.dim(0) || bias.dim(1) != weights.dim(1)) {
    layer_shape_error("conv_full", weights, bias);
  }
  const long Ci = long(x.dim(0)), P = long(x.dim(1)), H = long(x.dim(2)),
             W = long(x.dim(3));
  const long Co = long(weights.dim(1)), kd = long(weights.dim(3)),
             kh = long(weights.dim(4)), kw = long(weights.dim(5));
  require_odd_kernel("conv_full", size_t(kd), size_t(kh), size_t(kw));
  const long cd = kd / 2, ch = kh / 2, cw = kw / 2;
  const long plane = P * H * W;
  const long hw = H * W;
  const long ksz = kd * kh * kw;

  Tensor out(Shape{size_t(Co), size_t(P), size_t(H), size_t(W)});
  double* ov = out.mutable_data();
  const double* xv = x.data();
  const double* wv = weights.data();
  const double* bv = bias.data();

  // Per output element the accumulation order over (ci, kd, kh, kw) matches
  // conv3d exactly, so shared kernel sets reproduce conv3d bit for bit.
  for (long p = 0; p < P; ++p) {
    for (long co = 0; co < Co; ++co) {
      double* oplane = ov + co * plane + p * hw;
      std::fill(oplane, oplane + hw, bv[p * Co + co]);
      for (long ci = 0; ci < Ci; ++ci) {
        const double* wk = wv + ((p * Co + co) * Ci + ci) * ksz;
        for (long d = 0; d < kd; ++d) {
          const long pp = p + d - cd;
          if (pp < 0 || pp >= P) continue;
          for (long h = 0; h < kh; ++h) {
            for (long w = 0; w < kw; ++w) {
              axpy_shifted2(oplane, xv + ci * plane + pp * hw,
                            wk[(d * kh + h) * kw + w], H, W, h - ch, w - cw);
            }
          }
        }
      }
    }
  }

  const bool rec = recording(tape, {&x, &weights, &bias});
  const int ix = x.node(), iw = weights.node(), ib = bias.node();
  return attach(tape, rec, std::move(out),
                [=, x = x.detached(), weights = weights.detached()](Tape& t,
                                                                    const double* g) {
    const double* xv = x.data();
    const double* wv = weights.data();
    if (ib >= 0) {
      auto& gb = t.grad_buffer(ib);
      for (long p = 0; p < P; ++p) {
        for (long co = 0; co < Co; ++co) {
          double acc = 0.0;
          const double* gpl = g + co * plane + p * hw;
          for (long i = 0; i < hw; ++i) acc += gpl[i];
          gb[size_t(p * Co + co)] += acc;
        }
      }
    }
    if (iw >= 0) {
      auto& gw = t.grad_buffer(iw);
      for (long p = 0; p < P; ++p) {
        for (long co = 0; co < Co; ++co) {
          const double* gpl = g + co * plane + p * hw;
          for (long ci = 0; ci < Ci; ++ci) {
            double* gwk = gw.data() + ((p * Co + co) * Ci + ci) * ksz;
            for (long d = 0; d < kd; ++d) {
              const long pp = p + d - cd;
              if (pp < 0 || pp >= P) continue;
              for (long h = 0; h < kh; ++h) {
                for (long w = 0; w < kw; ++w) {
                  gwk[(d * kh + h) * kw + w] += dot_shifted2(
                      gpl, xv + ci * plane + pp * hw, H, W, h - ch, w - cw);
                }
              }
            }
          }
        }
      }
    }
    if (ix >= 0) {
      auto& gx = t.grad_buffer(ix);
      for (long p = 0; p < P; ++p) {
        for (long co = 0; co < Co; ++co) {
          const double* gpl = g + co * plane + p * hw;
          for (long ci = 0; ci < Ci; ++ci) {
            const double* wk = wv + ((p * Co + co) * Ci + ci) * ksz;
            for (long d = 0; d < kd; ++d) {
              const long pp = p + d - cd;
              if (pp < 0 || pp >= P) continue;
              for (long h = 0; h < kh; ++h) {
                for (long w = 0; w < kw; ++w) {
                  axpy_shifted2(gx.data() + ci * plane + pp * hw, gpl,
                                wk[(d * kh + h) * kw + w], H, W, ch - h, cw - w);
                }
              }
            }
          }
        }
      }
    }
  });
}

Tensor affine_level(Tape* tape, const Tensor& x, const Tensor& scale,
                    const Tensor& shift) {
  require_rank("affine_level", x, 4);
  require_rank("affine_level", scale, 2);
  Tensor::require_same_shape("affine_level", scale, shift);
  if (scale.dim(0) != x.dim(0) || scale.dim(1) != x.dim(1)) {
    layer_shape_error("affine_level", x, scale);
  }
  const size_t C = x.dim(0), P = x.dim(1), hw = x.dim(2) * x.dim(3);

  Tensor out(x.shape());
  double* ov = out.mutable_data();
  const double* xv = x.data();
  const double* sv = scale.data();
  const double* tv = shift.data();
  for (size_t c = 0; c < C; ++c) {
    for (size_t p = 0; p < P; ++p) {
      const double s = sv[c * P + p], b = tv[c * P + p];
      const double* xpl = xv + (c * P + p) * hw;
      double* opl = ov + (c * P + p) * hw;
      for (size_t i = 0; i < hw; ++i) opl[i] = s * xpl[i] + b;
    }
  }

  const bool rec = recording(tape, {&x, &scale, &shift});
  const int ix = x.node(), is = scale.node(), it = shift.node();
  return attach(tape, rec, std::move(out),
                [=, x = x.detached(), scale = scale.detached()](Tape& t,
                                                                const double* g) {
    const double* xv = x.data();
    const double* sv = scale.data();
    if (ix >= 0) {
      auto& gx = t.grad_buffer(ix);
      for (size_t c = 0; c < C; ++c) {
        for (size_t p = 0; p < P; ++p) {
          const double s = sv[c * P + p];
          const double* gpl = g + (c * P + p) * hw;
          double* gxp = gx.data() + (c * P + p) * hw;
          for (size_t i = 0; i < hw; ++i) gxp[i] += s * gpl[i];
        }
      }
    }
    if (is >= 0) {
      auto& gs = t.grad_buffer(is);
      for (size_t c = 0; c < C; ++c) {
        for (size_t p = 0; p < P; ++p) {
          const double* gpl = g + (c * P + p) * hw;
          const double* xpl = xv + (c * P + p) * hw;
          double acc = 0.0;
          for (size_t i = 0; i < hw; ++i) acc += gpl[i] * xpl[i];
          gs[c * P + p] += acc;
        }
      }
    }
    if (it >= 0) {
      auto& gt = t.grad_buffer(it);
      for (size_t c = 0; c < C; ++c) {
        for (size_t p = 0; p < P; ++p) {
          const double* gpl = g + (c * P + p) * hw;
          double acc = 0.0;
          for (size_t i = 0; i < hw; ++i) acc += gpl[i];
          gt[c * P + p] += acc;
        }
      }
    }
  });
}

namespace {

/// Stage 1 of the separable variant: one shared 2-D kernel per (C_out, C_in)
/// applied to every level independently, no bias.
Tensor conv2d_levelwise(Tape* tape, const Tensor& x, const Tensor& horiz) {
  const long Ci = long(x.dim(0)), P = long(x.dim(1)), H = long(x.dim(2)),
             W = long(x.dim(3));
  const long Co = long(horiz.dim(0)), kh = long(horiz.dim(2)), kw = long(horiz.dim(3));
  const long ch = kh / 2, cw = kw / 2;
  const long plane = P * H * W;

  Tensor out = Tensor::full(Shape{size_t(Co), size_t(P), size_t(H), size_t(W)}, 0.0);
  double* ov = out.mutable_data();
  const double* xv = x.data();
  const double* wv = horiz.data();
  for (long co = 0; co < Co; ++co) {
    for (long ci = 0; ci < Ci; ++ci) {
      const double* wk = wv + (co * Ci + ci) * kh * kw;
      for (long h = 0; h < kh; ++h) {
        for (long w = 0; w < kw; ++w) {
          axpy_shifted(ov + co * plane, xv + ci * plane, wk[h * kw + w], P, H, W, 0,
                       h - ch, w - cw);
        }
      }
    }
  }

  const bool rec = recording(tape, {&x, &horiz});
  const int ix = x.node(), iw = horiz.node();
  return attach(tape, rec, std::move(out),
                [=, x = x.detached(), horiz = horiz.detached()](Tape& t,
                                                                const double* g) {
    const double* xv = x.data();
    const double* wv = horiz.data();
    if (iw >= 0) {
      auto& gw = t.grad_buffer(iw);
      for (long co = 0; co < Co; ++co) {
        for (long ci = 0; ci < Ci; ++ci) {
          double* gwk = gw.data() + (co * Ci + ci) * kh * kw;
          for (long h = 0; h < kh; ++h) {
            for (long w = 0; w < kw; ++w) {
              gwk[h * kw + w] += dot_shifted(g + co * plane, xv + ci * plane, P, H, W,
                                             0, h - ch, w - cw);
            }
          }
        }
      }
    }
    if (ix >= 0) {
      auto& gx = t.grad_buffer(ix);
      for (long co = 0; co < Co; ++co) {
        for (long ci = 0; ci < Ci; ++ci) {
          const double* wk = wv + (co * Ci + ci) * kh * kw;
          for (long h = 0; h < kh; ++h) {
            for (long w = 0; w < kw; ++w) {
              axpy_shifted(gx.data() + ci * plane, g + co * plane, wk[h * kw + w], P,
                           H, W, 0, ch - h, cw - w);
            }
          }
        }
      }
    }
  });
}

/// Stage 2: channel-mixing 1-D convolution along the level axis plus bias.
Tensor conv1d_level(Tape* tape, const Tensor& y, const Tensor& vert,
                    const Tensor& bias) {
  const long Cm = long(y.dim(0)), P = long(y.dim(1)), H = long(y.dim(2)),
             W = long(y.dim(3));
  const long Co = long(vert.dim(0)), kd = long(vert.dim(2));
  const long cd = kd / 2;
  const long plane = P * H * W;

  Tensor out(Shape{size_t(Co), size_t(P), size_t(H), size_t(W)});
  double* ov = out.mutable_data();
  const double* yv = y.data();
  const double* vv = vert.data();
  const double* bv = bias.data();
  for (long co = 0; co < Co; ++co) {
    std::fill(ov + co * plane, ov + (co + 1) * plane, bv[co]);
    for (long cm = 0; cm < Cm; ++cm) {
      const double* vk = vv + (co * Cm + cm) * kd;
      for (long d = 0; d < kd; ++d) {
        axpy_shifted(ov + co * plane, yv + cm * plane, vk[d], P, H, W, d - cd, 0, 0);
      }
    }
  }

  const bool rec = recording(tape, {&y, &vert, &bias});
  const int iy = y.node(), iv = vert.node(), ib = bias.node();
  return attach(tape, rec, std::move(out),
                [=, y = y.detached(), vert = vert.detached()](Tape& t,
                                                              const double* g) {
    const double* yv = y.data();
    const double* vv = vert.data();
    if (ib >= 0) {
      auto& gb = t.grad_buffer(ib);
      for (long co = 0; co < Co; ++co) {
        double acc = 0.0;
        const double* gpl = g + co * plane;
        for (long i = 0; i < plane; ++i) acc += gpl[i];
        gb[size_t(co)] += acc;
      }
    }
    if (iv >= 0) {
      auto& gv = t.grad_buffer(iv);
      for (long co = 0; co < Co; ++co) {
        for (long cm = 0; cm < Cm; ++cm) {
          double* gvk = gv.data() + (co * Cm + cm) * kd;
          for (long d = 0; d < kd; ++d) {
            gvk[d] += dot_shifted(g + co * plane, yv + cm * plane, P, H, W, d - cd, 0, 0);
          }
        }
      }
    }
    if (iy >= 0) {
      auto& gy = t.grad_buffer(iy);
      for (long co = 0; co < Co; ++co) {
        for (long cm = 0; cm < Cm; ++cm) {
          const double* vk = vv + (co * Cm + cm) * kd;
          for (long d = 0; d < kd; ++d) {
            axpy_shifted(gy.data() + cm * plane, g + co * plane, vk[d], P, H, W,
                         cd - d, 0, 0);
          }
        }
      }
    }
  });
}

}  // namespace

Tensor conv_separable(Tape* tape, const Tensor& x, const Tensor& horiz,
                      const Tensor& vert, const Tensor& bias) {
  require_rank("conv_separable", x, 4);
  require_rank("conv_separable", horiz, 4);
  require_rank("conv_separable", vert, 3);
  require_rank("conv_separable", bias, 1);
  if (horiz.dim(1) != x.dim(0)) layer_shape_error("conv_separable", x, horiz);
  if (vert.dim(0) != horiz.dim(0) || vert.dim(1) != horiz.dim(0)) {
    layer_shape_error("conv_separable", horiz, vert);
  }
  if (bias.dim(0) != vert.dim(0)) layer_shape_error("conv_separable", vert, bias);
  require_odd_kernel("conv_separable", vert.dim(2), horiz.dim(2), horiz.dim(3));

  Tensor mid = conv2d_levelwise(tape, x, horiz);
  return conv1d_level(tape, mid, vert, bias);
}

Tensor maxpool3d(Tape* tape, const Tensor& x) {
  require_rank("maxpool3d", x, 4);
  return maxpool(tape, x, {1, 2, 2});
}

Tensor upsample3d(Tape* tape, const Tensor& x) {
  require_rank("upsample3d", x, 4);
  const size_t lead = x.dim(0) * x.dim(1);
  const size_t H = x.dim(2), W = x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), 2 * H, 2 * W});
  double* ov = out.mutable_data();
  const double* xv = x.data();
  for (size_t l = 0; l < lead; ++l) {
    const double* xpl = xv + l * H * W;
    double* opl = ov + l * 4 * H * W;
    for (size_t h = 0; h < H; ++h) {
      for (size_t w = 0; w < W; ++w) {
        const double v = xpl[h * W + w];
        double* o00 = opl + (2 * h) * 2 * W + 2 * w;
        o00[0] = v;
        o00[1] = v;
        o00[2 * W] = v;
        o00[2 * W + 1] = v;
      }
    }
  }

  const bool rec = recording(tape, {&x});
  const int ix = x.node();
  return attach(tape, rec, std::move(out), [=](Tape& t, const double* g) {
    if (ix < 0) return;
    auto& gx = t.grad_buffer(ix);
    for (size_t l = 0; l < lead; ++l) {
      const double* gpl = g + l * 4 * H * W;
      double* gxp = gx.data() + l * H * W;
      for (size_t h = 0; h < H; ++h) {
        for (size_t w = 0; w < W; ++w) {
          const double* g00 = gpl + (2 * h) * 2 * W + 2 * w;
          gxp[h * W + w] += g00[0] + g00[1] + g00[2 * W] + g00[2 * W + 1];
        }
      }
    }
  });
}

void batchnorm_update(BatchNormState& state, const BatchNormStats& stats,
                      double momentum) {
  if (!state.initialized) {
    state.running_mean = stats.mean;
    state.running_var = stats.var;
    state.initialized = true;
    return;
  }
  if (state.running_mean.size() != stats.mean.size()) {
    throw std::invalid_argument("batchnorm_update: channel count changed");
  }
  for (size_t c = 0; c < stats.mean.size(); ++c) {
    state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * stats.mean[c];
    state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * stats.var[c];
  }
}

Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 bool train, BatchNormState* state, BatchNormStats* captured,
                 double eps, double momentum) {
  if (x.rank() != 5 && x.rank() != 4) {
    throw std::invalid_argument("batchnorm: expected [N][C][P][H][W] or [C][P][H][W], got " +
                                shape_to_string(x.shape()));
  }
  const bool batched = x.rank() == 5;
  const size_t N = batched ? x.dim(0) : 1;
  const size_t C = x.dim(batched ? 1 : 0);
  const size_t plane = x.size() / (N * C);  // P*H*W
  require_rank("batchnorm", gamma, 1);
  Tensor::require_same_shape("batchnorm", gamma, beta);
  if (gamma.dim(0) != C) layer_shape_error("batchnorm", x, gamma);
  const size_t m = N * plane;

  std::vector<double> use_mean(C), use_var(C);
  const double* xv = x.data();
  if (train) {
    for (size_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const double* blk = xv + (n * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) sum += blk[i];
      }
      const double mu = sum / double(m);
      double var = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const double* blk = xv + (n * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = blk[i] - mu;
          var += d * d;
        }
      }
      use_mean[c] = mu;
      use_var[c] = var / double(m);
    }
    if (captured) {
      captured->mean = use_mean;
      captured->var = use_var;
    }
    if (state) batchnorm_update(*state, BatchNormStats{use_mean, use_var}, momentum);
  } else {
    if (!state || !state->initialized) {
      throw std::runtime_error("batchnorm: eval mode requires initialized running statistics");
    }
    if (state->running_mean.size() != C) {
      throw std::invalid_argument("batchnorm: running statistics have " +
                                  std::to_string(state->running_mean.size()) +
                                  " channels, input has " + std::to_string(C));
    }
    use_mean = state->running_mean;
    use_var = state->running_var;
  }

  std::vector<double> inv_std(C);
  for (size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(use_var[c] + eps);

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  double* hv = xhat.mutable_data();
  double* ov = out.mutable_data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  for (size_t n = 0; n < N; ++n) {
    for (size_t c = 0; c < C; ++c) {
      const double mu = use_mean[c], is = inv_std[c], ga = gv[c], be = bv[c];
      const double* blk = xv + (n * C + c) * plane;
      double* hblk = hv + (n * C + c) * plane;
      double* oblk = ov + (n * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double xh = (blk[i] - mu) * is;
        hblk[i] = xh;
        oblk[i] = ga * xh + be;
      }
    }
  }

  const bool rec = recording(tape, {&x, &gamma, &beta});
  const int ix = x.node(), iga = gamma.node(), ibe = beta.node();
  return attach(tape, rec, std::move(out),
                [=, gamma = gamma.detached()](Tape& t, const double* g) {
    const double* hv = xhat.data();
    const double* gv = gamma.data();
    if (iga >= 0) {
      auto& gg = t.grad_buffer(iga);
      for (size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
          const double* gblk = g + (n * C + c) * plane;
          const double* hblk = hv + (n * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) acc += gblk[i] * hblk[i];
        }
        gg[c] += acc;
      }
    }
    if (ibe >= 0) {
      auto& gb = t.grad_buffer(ibe);
      for (size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
          const double* gblk = g + (n * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) acc += gblk[i];
        }
        gb[c] += acc;
      }
    }
    if (ix >= 0) {
      auto& gx = t.grad_buffer(ix);
      for (size_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gh = 0.0;
        if (train) {
          for (size_t n = 0; n < N; ++n) {
            const double* gblk = g + (n * C + c) * plane;
            const double* hblk = hv + (n * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              sum_g += gblk[i];
              sum_gh += gblk[i] * hblk[i];
            }
          }
          sum_g /= double(m);
          sum_gh /= double(m);
        }
        const double scale = gv[c] * inv_std[c];
        for (size_t n = 0; n < N; ++n) {
          const double* gblk = g + (n * C + c) * plane;
          const double* hblk = hv + (n * C + c) * plane;
          double* gxb = gx.data() + (n * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) {
            gxb[i] += scale * (gblk[i] - sum_g - hblk[i] * sum_gh);
          }
        }
      }
    }
  });
}

std::pair<Tensor, Tensor> convlstm_cell(Tape* tape, const Tensor& x_t,
                                        const Tensor& h_prev, const Tensor& c_prev,
                                        const ConvLstmWeights& weights) {
  Tensor::require_same_shape("convlstm_cell", h_prev, c_prev);
  const size_t Ch = h_prev.dim(0);
  const Tensor zero_bias(Shape{Ch});

  std::array<Tensor, 4> pre;
  for (size_t k = 0; k < 4; ++k) {
    Tensor from_x = conv3d(tape, x_t, weights.wx[k], weights.bias[k]);
    Tensor from_h = conv3d(tape, h_prev, weights.wh[k], zero_bias);
    pre[k] = add(tape, from_x, from_h);
  }
  Tensor i_gate = sigmoid(tape, pre[0]);
  Tensor f_gate = sigmoid(tape, pre[1]);
  Tensor o_gate = sigmoid(tape, pre[2]);
  Tensor g_gate = tanh(tape, pre[3]);

  Tensor c_t = add(tape, mul(tape, f_gate, c_prev), mul(tape, i_gate, g_gate));
  Tensor h_t = mul(tape, o_gate, tanh(tape, c_t));
  return {h_t, c_t};
}

Tensor he_uniform(const Shape& shape, size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("he_uniform: fan_in must be >= 1");
  const double limit = std::sqrt(6.0 / double(fan_in));
  Tensor t(shape);
  double* v = t.mutable_data();
  for (size_t i = 0; i < t.size(); ++i) v[i] = rng.uniform(-limit, limit);
  return t;
}

}  // namespace spreadnet
