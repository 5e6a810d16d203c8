#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pyrlip/core/exact_sum.hpp"
#include "pyrlip/core/gemm.hpp"
#include "pyrlip/core/tape.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip {

/// Names of every differentiable op the tape can record. The gradient-check
/// suite must cover each of them.
inline const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> names = {
      "add",         "sub",         "mul",         "scale",    "add_scalar", "relu",          "matmul",
      "bmm",         "reduce_sum",  "reduce_mean", "reduce_max", "softmax",  "linear",        "concat",
      "reshape",     "permute",     "temporal_mean", "conv1d", "conv2d",     "conv3d",        "batchnorm",
      "cross_entropy"};
  return names;
}

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

inline std::size_t check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(x.shape()));
  return axis;
}

// outer x extent x inner factorisation of a shape around one axis
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::finish("add", Tensor(a.shape(), std::move(out)), {&a, &b}, [] {
    return [](std::span<const double> g, const GradSink& sink) {
      for (std::size_t in = 0; in < 2; ++in)
        if (auto d = sink.buffer(in); !d.empty())
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    };
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::finish("sub", Tensor(a.shape(), std::move(out)), {&a, &b}, [] {
    return [](std::span<const double> g, const GradSink& sink) {
      if (auto d = sink.buffer(0); !d.empty())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      if (auto d = sink.buffer(1); !d.empty())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::finish("mul", Tensor(a.shape(), std::move(out)), {&a, &b}, [&] {
    return [av = a.storage(), bv = b.storage()](std::span<const double> g, const GradSink& sink) {
      if (auto d = sink.buffer(0); !d.empty())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*bv)[i];
      if (auto d = sink.buffer(1); !d.empty())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*av)[i];
    };
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::finish("scale", Tensor(a.shape(), std::move(out)), {&a}, [s] {
    return [s](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
    };
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return detail::finish("add_scalar", Tensor(a.shape(), std::move(out)), {&a}, [] {
    return [](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    };
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0. NaN passes through.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = a[i] > 0.0;
    out[i] = on || std::isnan(a[i]) ? a[i] : 0.0;
    h = h * 1315423911ULL + (on ? i + 1 : 0);
  }
  if (a.attached()) a.tape()->mix_kink(h);
  return detail::finish("relu", Tensor(a.shape(), std::move(out)), {&a}, [&] {
    return [av = a.storage()](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*av)[i] > 0.0) d[i] += g[i];
    };
  });
}

enum class EwiseKind { add, sub, mul, relu, scale };

/// Dispatching form. Binary kinds take a tensor of equal shape; scale takes
/// a scalar; relu ignores the second operand.
inline Tensor ewise(EwiseKind kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
  case EwiseKind::add: return add(a, b);
  case EwiseKind::sub: return sub(a, b);
  case EwiseKind::mul: return mul(a, b);
  case EwiseKind::relu: return relu(a);
  case EwiseKind::scale: return scale(a, b.item());
  }
  throw Error("unknown elementwise kind");
}

inline Tensor ewise(EwiseKind kind, const Tensor& a, double b) {
  switch (kind) {
  case EwiseKind::add: return add_scalar(a, b);
  case EwiseKind::sub: return add_scalar(a, -b);
  case EwiseKind::mul:
  case EwiseKind::scale: return scale(a, b);
  case EwiseKind::relu: return relu(a);
  }
  throw Error("unknown elementwise kind");
}

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor out(std::move(shape), a.values());
  return detail::finish("reshape", std::move(out), {&a}, [] {
    return [](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    };
  });
}

/// out.shape[i] = a.shape[axes[i]].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw ShapeError("permute: axis list length does not match rank");
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: axes are not a permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1), src_stride(r);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = a.dim(axes[i]);
    src_stride[i] = in_strides[axes[i]];
  }
  // index map out -> in
  auto index_map = std::make_shared<std::vector<std::size_t>>(a.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < a.size(); ++o) {
    (*index_map)[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a[(*index_map)[o]];
  return detail::finish("permute", Tensor(std::move(out_shape), std::move(out)), {&a}, [&] {
    return [index_map](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t o = 0; o < g.size(); ++o) d[(*index_map)[o]] += g[o];
    };
  });
}

/// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  detail::check_axis("concat", parts.front(), axis);
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i])
        throw ShapeError("concat: " + to_string(p.shape()) + " does not match " + to_string(ref) +
                         " off the concat axis");
    out_shape[axis] += p.dim(axis);
  }
  const auto split = detail::split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * split.extent * split.inner + offset * split.inner));
    offset += p.dim(axis);
  }
  Tensor result(std::move(out_shape), std::move(out));
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (!p.attached()) continue;
    if (tape && tape != p.tape()) throw TapeError("concat inputs are recorded on different tapes");
    tape = p.tape();
  }
  if (!tape) return result;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  auto backward = [split, offsets, widths](std::span<const double> g, const GradSink& sink) {
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto d = sink.buffer(k);
      if (d.empty()) continue;
      const std::size_t chunk = widths[k] * split.inner;
      for (std::size_t o = 0; o < split.outer; ++o) {
        const double* src = g.data() + o * split.extent * split.inner + offsets[k] * split.inner;
        double* dst = d.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  };
  return tape->record_many("concat", std::move(result), parts, std::move(backward));
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) { return concat(parts, 1); }

// ---------------------------------------------------------------- products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return detail::finish("matmul", Tensor({m, n}, std::move(out)), {&a, &b}, [&] {
    return [av = a.storage(), bv = b.storage(), m, k, n](std::span<const double> g, const GradSink& sink) {
      if (auto d = sink.buffer(0); !d.empty()) detail::gemm(false, true, m, k, n, g.data(), bv->data(), d.data(), true);
      if (auto d = sink.buffer(1); !d.empty()) detail::gemm(true, false, k, n, m, av->data(), g.data(), d.data(), true);
    };
  });
}

/// Batched product: [B x M x K] . [B x K x N] -> [B x M x N].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm(false, false, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
                 out.data() + i * m * n, false);
  return detail::finish("bmm", Tensor({batch, m, n}, std::move(out)), {&a, &b}, [&] {
    return [av = a.storage(), bv = b.storage(), batch, m, k, n](std::span<const double> g, const GradSink& sink) {
      if (auto d = sink.buffer(0); !d.empty())
        for (std::size_t i = 0; i < batch; ++i)
          detail::gemm(false, true, m, k, n, g.data() + i * m * n, bv->data() + i * k * n, d.data() + i * m * k, true);
      if (auto d = sink.buffer(1); !d.empty())
        for (std::size_t i = 0; i < batch; ++i)
          detail::gemm(true, false, k, n, m, av->data() + i * m * k, g.data() + i * m * n, d.data() + i * k * n, true);
    };
  });
}

/// x[... x D_in] . w[D_in x D_out] + bias[D_out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0))
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(w.shape()));
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1))
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(w.shape()));
  const std::size_t din = w.dim(0), dout = w.dim(1), rows = x.size() / din;
  std::vector<double> out(rows * dout);
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * dout));
  detail::gemm(false, false, rows, dout, din, x.data().data(), w.data().data(), out.data(), true);
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  return detail::finish("linear", Tensor(std::move(out_shape), std::move(out)), {&x, &w, &bias}, [&] {
    return [xv = x.storage(), wv = w.storage(), rows, din, dout](std::span<const double> g, const GradSink& sink) {
      if (auto d = sink.buffer(0); !d.empty()) detail::gemm(false, true, rows, din, dout, g.data(), wv->data(), d.data(), true);
      if (auto d = sink.buffer(1); !d.empty()) detail::gemm(true, false, din, dout, rows, xv->data(), g.data(), d.data(), true);
      if (auto d = sink.buffer(2); !d.empty())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < dout; ++j) d[j] += g[r * dout + j];
    };
  });
}

// ---------------------------------------------------------------- reductions

enum class ReduceKind { mean, sum, max };

inline Tensor reduce(ReduceKind kind, const Tensor& x, std::size_t axis) {
  const char* op = kind == ReduceKind::mean ? "reduce_mean" : kind == ReduceKind::sum ? "reduce_sum" : "reduce_max";
  detail::check_axis(op, x, axis);
  const auto sp = detail::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(sp.outer * sp.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == ReduceKind::max) argmax->resize(out.size());
  std::uint64_t h = 0;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const double* base = x.data().data() + o * sp.extent * sp.inner + i;
      double acc = kind == ReduceKind::max ? base[0] : 0.0;
      std::size_t best = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double v = base[e * sp.inner];
        if (kind == ReduceKind::max) {
          if (v > acc) {
            acc = v;
            best = e;
          }
        } else {
          acc += v;
        }
      }
      if (kind == ReduceKind::mean) acc /= static_cast<double>(sp.extent);
      if (kind == ReduceKind::max) {
        (*argmax)[o * sp.inner + i] = best;
        h = h * 1315423911ULL + best;
      }
      out[o * sp.inner + i] = acc;
    }
  if (kind == ReduceKind::max && x.attached()) x.tape()->mix_kink(h);
  return detail::finish(op, Tensor(std::move(out_shape), std::move(out)), {&x}, [&] {
    return [kind, sp, argmax](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      const double w = kind == ReduceKind::mean ? 1.0 / static_cast<double>(sp.extent) : 1.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double gi = g[o * sp.inner + i];
          double* base = d.data() + o * sp.extent * sp.inner + i;
          if (kind == ReduceKind::max)
            base[(*argmax)[o * sp.inner + i] * sp.inner] += gi;
          else
            for (std::size_t e = 0; e < sp.extent; ++e) base[e * sp.inner] += gi * w;
        }
    };
  });
}

inline Tensor sum(const Tensor& x, std::size_t axis) { return reduce(ReduceKind::sum, x, axis); }
inline Tensor mean(const Tensor& x, std::size_t axis) { return reduce(ReduceKind::mean, x, axis); }

/// Sum of all elements as a scalar tensor.
inline Tensor sum_all(const Tensor& x) { return reduce(ReduceKind::sum, reshape(x, {x.size()}), 0); }

/// Mean over axis 1 of x[B x T x C] restricted to frames with mask[b][t] != 0
/// (all frames when `masks` is empty). Sums are correctly rounded, so the
/// result is exactly invariant to the order of frames.
inline Tensor temporal_mean(const Tensor& x, const std::vector<std::vector<std::uint8_t>>& masks = {}) {
  if (x.rank() != 3) throw ShapeError("temporal_mean: expected [B x T x C], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), frames = x.dim(1), width = x.dim(2);
  if (!masks.empty() && masks.size() != batch) throw ShapeError("temporal_mean: one mask per sample required");
  auto weights = std::make_shared<std::vector<double>>(batch * frames, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t active = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      if (!masks.empty() && masks[b].size() != frames)
        throw ShapeError("temporal_mean: mask length " + std::to_string(masks[b].size()) + " != T=" + std::to_string(frames));
      active += masks.empty() || masks[b][t] ? 1 : 0;
    }
    if (active == 0) throw ShapeError("temporal_mean: mask of sample " + std::to_string(b) + " has no active frame");
    for (std::size_t t = 0; t < frames; ++t)
      (*weights)[b * frames + t] = (masks.empty() || masks[b][t]) ? 1.0 / static_cast<double>(active) : 0.0;
  }
  std::vector<double> out(batch * width);
  ExactSum acc;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t active = 0;
    for (std::size_t t = 0; t < frames; ++t) active += (*weights)[b * frames + t] != 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      acc.clear();
      for (std::size_t t = 0; t < frames; ++t)
        if ((*weights)[b * frames + t] != 0.0) acc.add(x[(b * frames + t) * width + c]);
      out[b * width + c] = acc.result() / static_cast<double>(active);
    }
  }
  return detail::finish("temporal_mean", Tensor({batch, width}, std::move(out)), {&x}, [&] {
    return [weights, batch, frames, width](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < frames; ++t) {
          const double w = (*weights)[b * frames + t];
          if (w == 0.0) continue;
          for (std::size_t c = 0; c < width; ++c) d[(b * frames + t) * width + c] += g[b * width + c] * w;
        }
    };
  });
}

// ---------------------------------------------------------------- softmax

/// Numerically stable softmax along `axis` (max subtracted first).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis("softmax", x, axis);
  if (!x.all_finite()) throw NumericError("softmax: non-finite input");
  const auto sp = detail::split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = x[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, x[base + e * sp.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double v = std::exp(x[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= total;
    }
  Tensor result(x.shape(), std::move(out));
  return detail::finish("softmax", result, {&x}, [&] {
    return [yv = result.storage(), sp](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      const auto& y = *yv;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.extent * sp.inner + i;
          double dot = 0.0;
          for (std::size_t e = 0; e < sp.extent; ++e) dot += g[base + e * sp.inner] * y[base + e * sp.inner];
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t j = base + e * sp.inner;
            d[j] += y[j] * (g[j] - dot);
          }
        }
    };
  });
}

// ---------------------------------------------------------------- loss

/// Mean over the batch of -log softmax(logits)[label], via a fused
/// log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: expected [B x V] logits, got " + to_string(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count does not match batch");
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes)
      throw ShapeError("cross_entropy: label " + std::to_string(labels[b]) + " out of range for " +
                       std::to_string(classes) + " classes");
    const double* row = logits.data().data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t v = 0; v < classes; ++v) z += std::exp(row[v] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t v = 0; v < classes; ++v) (*probs)[b * classes + v] = std::exp(row[v] - lse);
    total += lse - row[labels[b]];
  }
  return detail::finish("cross_entropy", Tensor::scalar(total / static_cast<double>(batch)), {&logits}, [&] {
    return [probs, labels, batch, classes](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      const double s = g[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t v = 0; v < classes; ++v)
          d[b * classes + v] += s * ((*probs)[b * classes + v] - (v == labels[b] ? 1.0 : 0.0));
    };
  });
}

/// Inverted dropout with a mask drawn from `rng`. Identity when p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::vector<double> mask(x.size());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

} // namespace pyrlip
