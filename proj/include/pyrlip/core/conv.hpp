#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pyrlip/core/gemm.hpp"
#include "pyrlip/core/tape.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip {

/// Multiply-adds issued by convolution forward passes on this thread.
/// Used by the cost accounting to check closed-form FLOP formulas.
inline std::uint64_t& conv_mac_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

/// Per-axis geometry of a 1-, 2- or 3-D convolution.
template <std::size_t D>
struct ConvParams {
  std::array<std::size_t, D> stride{};
  std::array<std::size_t, D> pad{};
  std::array<std::size_t, D> dilation{};

  static ConvParams uniform(std::size_t stride, std::size_t pad, std::size_t dilation = 1) {
    ConvParams p;
    p.stride.fill(stride);
    p.pad.fill(pad);
    p.dilation.fill(dilation);
    return p;
  }
};

/// Output extent along one axis; floor semantics, error if the padded input
/// is shorter than the dilated kernel.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                   std::size_t dilation = 1) {
  if (stride == 0 || dilation == 0) throw ShapeError("conv: stride and dilation must be >= 1");
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * pad < span)
    throw ShapeError("conv: kernel span " + std::to_string(span) + " exceeds padded extent " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - span) / stride + 1;
}

namespace detail {

// Geometry normalised to three spatial axes; missing leading axes have
// extent 1, kernel 1, stride 1, pad 0.
struct ConvGeom {
  std::size_t batch = 0, cin = 0, cout = 0;
  std::array<std::size_t, 3> in{1, 1, 1}, k{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0}, dil{1, 1, 1}, out{1, 1, 1};
  std::size_t in_vol = 1, k_vol = 1, out_vol = 1;
  // tap[d][kk * out[d] + o] = input coordinate, or -1 when it falls in padding
  std::array<std::vector<std::ptrdiff_t>, 3> tap;
  // taps [klo, klo + kn) along each axis are the ones that ever touch input
  std::array<std::size_t, 3> klo{0, 0, 0}, kn{1, 1, 1};
  std::size_t kc_vol = 1;

  /// Rows of the full (uncropped) column matrix.
  std::size_t rows() const { return cin * k_vol; }
  /// Rows actually materialised, after dropping all-padding taps.
  std::size_t crop_rows() const { return cin * kc_vol; }
  bool cropped() const { return kc_vol != k_vol; }

  void finalize() {
    in_vol = in[0] * in[1] * in[2];
    k_vol = k[0] * k[1] * k[2];
    out_vol = out[0] * out[1] * out[2];
    for (std::size_t d = 0; d < 3; ++d) {
      tap[d].assign(k[d] * out[d], -1);
      std::size_t lo = k[d], hi = 0;
      for (std::size_t kk = 0; kk < k[d]; ++kk)
        for (std::size_t o = 0; o < out[d]; ++o) {
          const auto pos = static_cast<std::ptrdiff_t>(o * stride[d] + kk * dil[d]) - static_cast<std::ptrdiff_t>(pad[d]);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(in[d])) {
            tap[d][kk * out[d] + o] = pos;
            lo = std::min(lo, kk);
            hi = std::max(hi, kk + 1);
          }
        }
      // strided outputs can all land in padding, leaving no tap at all
      klo[d] = hi > lo ? lo : 0;
      kn[d] = hi > lo ? hi - lo : 0;
    }
    kc_vol = kn[0] * kn[1] * kn[2];
  }

  /// Index into a [.. x k0 x k1 x k2] kernel of cropped tap r (within one input channel).
  std::size_t full_tap(std::size_t r) const {
    const std::size_t kx = r % kn[2], ky = (r / kn[2]) % kn[1], kz = r / (kn[1] * kn[2]);
    return ((kz + klo[0]) * k[1] + ky + klo[1]) * k[2] + kx + klo[2];
  }
};

template <std::size_t D>
ConvGeom make_geom(const char* op, const Tensor& x, const Tensor& w, const ConvParams<D>& p) {
  if (x.rank() != D + 2 || w.rank() != D + 2)
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(D + 2) + " input and weight, got " +
                     to_string(x.shape()) + " and " + to_string(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError(std::string(op) + ": input channels " + std::to_string(x.dim(1)) + " != weight input channels " +
                     std::to_string(w.dim(1)));
  ConvGeom g;
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.cout = w.dim(0);
  for (std::size_t d = 0; d < D; ++d) {
    const std::size_t a = 3 - D + d;
    g.in[a] = x.dim(2 + d);
    g.k[a] = w.dim(2 + d);
    g.stride[a] = p.stride[d];
    g.pad[a] = p.pad[d];
    g.dil[a] = p.dilation[d];
    g.out[a] = conv_out_extent(g.in[a], g.k[a], g.stride[a], g.pad[a], g.dil[a]);
  }
  g.finalize();
  return g;
}

// col[r, (n - n0) * out_vol + p] for images [n0, n1), r over cropped taps
inline void im2col(const ConvGeom& g, const double* x, std::size_t n0, std::size_t n1, double* col) {
  const std::size_t ncols = (n1 - n0) * g.out_vol;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kz = g.klo[0]; kz < g.klo[0] + g.kn[0]; ++kz)
      for (std::size_t ky = g.klo[1]; ky < g.klo[1] + g.kn[1]; ++ky)
        for (std::size_t kx = g.klo[2]; kx < g.klo[2] + g.kn[2]; ++kx) {
          const std::size_t r =
              ((ci * g.kn[0] + kz - g.klo[0]) * g.kn[1] + ky - g.klo[1]) * g.kn[2] + kx - g.klo[2];
          double* dst = col + r * ncols;
          const auto* tz = g.tap[0].data() + kz * g.out[0];
          const auto* ty = g.tap[1].data() + ky * g.out[1];
          const auto* tx = g.tap[2].data() + kx * g.out[2];
          for (std::size_t n = n0; n < n1; ++n) {
            const double* src = x + (n * g.cin + ci) * g.in_vol;
            for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
              if (tz[oz] < 0) {
                std::fill_n(dst, g.out[1] * g.out[2], 0.0);
                dst += g.out[1] * g.out[2];
                continue;
              }
              const double* plane = src + static_cast<std::size_t>(tz[oz]) * g.in[1] * g.in[2];
              for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
                if (ty[oy] < 0) {
                  std::fill_n(dst, g.out[2], 0.0);
                  dst += g.out[2];
                  continue;
                }
                const double* row = plane + static_cast<std::size_t>(ty[oy]) * g.in[2];
                for (std::size_t ox = 0; ox < g.out[2]; ++ox) *dst++ = tx[ox] < 0 ? 0.0 : row[tx[ox]];
              }
            }
          }
        }
}

// dx += col2im(col)
inline void col2im(const ConvGeom& g, const double* col, std::size_t n0, std::size_t n1, double* dx) {
  const std::size_t ncols = (n1 - n0) * g.out_vol;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kz = g.klo[0]; kz < g.klo[0] + g.kn[0]; ++kz)
      for (std::size_t ky = g.klo[1]; ky < g.klo[1] + g.kn[1]; ++ky)
        for (std::size_t kx = g.klo[2]; kx < g.klo[2] + g.kn[2]; ++kx) {
          const std::size_t r =
              ((ci * g.kn[0] + kz - g.klo[0]) * g.kn[1] + ky - g.klo[1]) * g.kn[2] + kx - g.klo[2];
          const double* src = col + r * ncols;
          const auto* tz = g.tap[0].data() + kz * g.out[0];
          const auto* ty = g.tap[1].data() + ky * g.out[1];
          const auto* tx = g.tap[2].data() + kx * g.out[2];
          for (std::size_t n = n0; n < n1; ++n) {
            double* dst = dx + (n * g.cin + ci) * g.in_vol;
            for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
              if (tz[oz] < 0) {
                src += g.out[1] * g.out[2];
                continue;
              }
              double* plane = dst + static_cast<std::size_t>(tz[oz]) * g.in[1] * g.in[2];
              for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
                if (ty[oy] < 0) {
                  src += g.out[2];
                  continue;
                }
                double* row = plane + static_cast<std::size_t>(ty[oy]) * g.in[2];
                for (std::size_t ox = 0; ox < g.out[2]; ++ox, ++src)
                  if (tx[ox] >= 0) row[tx[ox]] += *src;
              }
            }
          }
        }
}

// Images per im2col chunk; depends on geometry only, so the summation
// order of weight gradients is fixed for a given shape.
inline std::size_t chunk_images(const ConvGeom& g) {
  constexpr std::size_t budget = std::size_t{1} << 16;
  const std::size_t per_image = std::max<std::size_t>(1, g.crop_rows() * g.out_vol);
  return std::clamp<std::size_t>(budget / per_image, 1, g.batch);
}

// [C_out x C_in*kc_vol] weight matrix restricted to the taps that touch input.
inline std::vector<double> crop_weight(const ConvGeom& g, const double* w) {
  if (!g.cropped()) return {w, w + g.cout * g.rows()};
  std::vector<double> out(g.cout * g.crop_rows());
  for (std::size_t oc = 0; oc < g.cout * g.cin; ++oc)
    for (std::size_t r = 0; r < g.kc_vol; ++r) out[oc * g.kc_vol + r] = w[oc * g.k_vol + g.full_tap(r)];
  return out;
}

inline void uncrop_weight_add(const ConvGeom& g, const double* wc, double* w) {
  for (std::size_t oc = 0; oc < g.cout * g.cin; ++oc)
    for (std::size_t r = 0; r < g.kc_vol; ++r) w[oc * g.k_vol + g.full_tap(r)] += wc[oc * g.kc_vol + r];
}

inline Tensor conv_impl(const char* op, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                        const ConvGeom& geom, Shape out_shape) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != geom.cout))
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias->shape()) + " does not match " +
                     std::to_string(geom.cout) + " output channels");
  const std::size_t rows = geom.crop_rows();
  const std::size_t chunk = chunk_images(geom);
  const auto wmat = std::make_shared<const std::vector<double>>(crop_weight(geom, w.data().data()));
  std::vector<double> out(geom.batch * geom.cout * geom.out_vol);
  std::vector<double> col, ybuf;
  for (std::size_t n0 = 0; n0 < geom.batch; n0 += chunk) {
    const std::size_t n1 = std::min(geom.batch, n0 + chunk);
    const std::size_t ncols = (n1 - n0) * geom.out_vol;
    col.resize(rows * ncols);
    ybuf.resize(geom.cout * ncols);
    im2col(geom, x.data().data(), n0, n1, col.data());
    gemm(false, false, geom.cout, ncols, rows, wmat->data(), col.data(), ybuf.data(), false);
    conv_mac_counter() += static_cast<std::uint64_t>(geom.cout) * geom.rows() * ncols;
    for (std::size_t n = n0; n < n1; ++n)
      for (std::size_t co = 0; co < geom.cout; ++co) {
        const double b = bias ? (*bias)[co] : 0.0;
        const double* src = ybuf.data() + co * ncols + (n - n0) * geom.out_vol;
        double* dst = out.data() + (n * geom.cout + co) * geom.out_vol;
        for (std::size_t p = 0; p < geom.out_vol; ++p) dst[p] = src[p] + b;
      }
  }
  const Tensor no_bias = Tensor::scalar(0.0);
  const Tensor& b_in = bias ? *bias : no_bias;
  return finish(op, Tensor(std::move(out_shape), std::move(out)), {&x, &w, &b_in}, [&] {
    return [xv = x.storage(), wmat, geom, has_bias = bias.has_value()](std::span<const double> g,
                                                                     const GradSink& sink) {
      auto dx = sink.buffer(0);
      auto dw = sink.buffer(1);
      auto db = has_bias ? sink.buffer(2) : std::span<double>{};
      const std::size_t rows = geom.crop_rows();
      const std::size_t chunk = chunk_images(geom);
      std::vector<double> col, gbuf, dwc(dw.empty() ? 0 : geom.cout * rows, 0.0);
      for (std::size_t n0 = 0; n0 < geom.batch; n0 += chunk) {
        const std::size_t n1 = std::min(geom.batch, n0 + chunk);
        const std::size_t ncols = (n1 - n0) * geom.out_vol;
        gbuf.resize(geom.cout * ncols);
        for (std::size_t n = n0; n < n1; ++n)
          for (std::size_t co = 0; co < geom.cout; ++co)
            std::copy_n(g.data() + (n * geom.cout + co) * geom.out_vol, geom.out_vol,
                        gbuf.data() + co * ncols + (n - n0) * geom.out_vol);
        col.resize(rows * ncols);
        if (!dw.empty()) {
          im2col(geom, xv->data(), n0, n1, col.data());
          gemm(false, true, geom.cout, rows, ncols, gbuf.data(), col.data(), dwc.data(), true);
        }
        if (!dx.empty()) {
          gemm(true, false, rows, ncols, geom.cout, wmat->data(), gbuf.data(), col.data(), false);
          col2im(geom, col.data(), n0, n1, dx.data());
        }
        if (!db.empty())
          for (std::size_t co = 0; co < geom.cout; ++co) {
            const double* src = gbuf.data() + co * ncols;
            double s = 0.0;
            for (std::size_t i = 0; i < ncols; ++i) s += src[i];
            db[co] += s;
          }
      }
      if (!dw.empty()) uncrop_weight_add(geom, dwc.data(), dw.data());
    };
  });
}

// Stride-1 convolution evaluated directly. Kernel taps that only ever see
// padding are dropped and the padding is trimmed to what the remaining taps
// read. Each image is then laid out on the padded grid so that one tap is a
// single contiguous axpy over all output positions ("wide" rows whose extra
// columns are discarded).
struct DirectGeom {
  std::array<std::size_t, 3> klo{}, kn{}, off{}, ext{};
  std::size_t vol = 0, len = 0;
  std::array<std::size_t, 3> step{};

  explicit DirectGeom(const ConvGeom& g) {
    for (std::size_t d = 0; d < 3; ++d) {
      // tap kk touches real input iff [kk, kk + out) meets [pad, pad + in)
      klo[d] = g.pad[d] + 1 > g.out[d] ? g.pad[d] + 1 - g.out[d] : 0;
      kn[d] = std::min(g.k[d], g.pad[d] + g.in[d]) - klo[d];
      off[d] = g.pad[d] - klo[d];
      ext[d] = g.out[d] + kn[d] - 1;
    }
    step = {ext[1] * ext[2], ext[2], 1};
    vol = ext[0] * step[0];
    len = (g.out[0] - 1) * step[0] + (g.out[1] - 1) * step[1] + g.out[2];
  }

  std::size_t wide(std::size_t z, std::size_t y, std::size_t x) const { return z * step[0] + y * step[1] + x; }

  // visits (input offset, padded offset, run length) for every input row kept
  template <class F>
  void rows(const ConvGeom& g, F&& f) const {
    for (std::size_t z = 0; z < g.in[0]; ++z) {
      if (z + off[0] >= ext[0]) break;
      for (std::size_t y = 0; y < g.in[1]; ++y) {
        if (y + off[1] >= ext[1]) break;
        const std::size_t run = std::min(g.in[2], ext[2] - std::min(ext[2], off[2]));
        f((z * g.in[1] + y) * g.in[2], wide(z + off[0], y + off[1], off[2]), run);
      }
    }
  }
};

inline bool use_direct(const ConvGeom& g) {
  for (std::size_t d = 0; d < 3; ++d)
    if (g.stride[d] != 1 || g.dil[d] != 1) return false;
  // measured crossover: GEMM wins once C_out reaches 16 or the maps get tiny
  return g.k_vol > 1 && g.cout <= 8 && g.out_vol >= 36;
}

// acc[i] += sum_t w[t] * s[i + t] for i < len; the tap loop is unrolled for
// the kernel widths that occur in practice.
template <std::size_t KX>
void row_taps_fixed(double* acc, const double* s, const double* w, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) {
    double a = acc[i];
    for (std::size_t t = 0; t < KX; ++t) a += w[t] * s[i + t];
    acc[i] = a;
  }
}

inline void row_taps(double* acc, const double* s, const double* w, std::size_t kx, std::size_t len) {
  switch (kx) {
  case 1: return row_taps_fixed<1>(acc, s, w, len);
  case 2: return row_taps_fixed<2>(acc, s, w, len);
  case 3: return row_taps_fixed<3>(acc, s, w, len);
  case 4: return row_taps_fixed<4>(acc, s, w, len);
  case 5: return row_taps_fixed<5>(acc, s, w, len);
  case 6: return row_taps_fixed<6>(acc, s, w, len);
  case 7: return row_taps_fixed<7>(acc, s, w, len);
  case 8: return row_taps_fixed<8>(acc, s, w, len);
  case 9: return row_taps_fixed<9>(acc, s, w, len);
  default:
    for (std::size_t i = 0; i < len; ++i) {
      double a = acc[i];
      for (std::size_t t = 0; t < kx; ++t) a += w[t] * s[i + t];
      acc[i] = a;
    }
  }
}

inline Tensor direct_conv(const char* op, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                          const ConvGeom& g, Shape out_shape) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout))
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias->shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  const DirectGeom dg(g);
  auto xp = std::make_shared<std::vector<double>>(g.batch * g.cin * dg.vol, 0.0);
  for (std::size_t nc = 0; nc < g.batch * g.cin; ++nc) {
    const double* src = x.data().data() + nc * g.in_vol;
    double* dst = xp->data() + nc * dg.vol;
    dg.rows(g, [&](std::size_t i, std::size_t o, std::size_t run) { std::copy_n(src + i, run, dst + o); });
  }
  // cropped kernel rows: wc[((co * cin + ci) * kn0 + kz) * kn1 + ky][kx]
  const std::size_t krows = dg.kn[0] * dg.kn[1], kx = dg.kn[2];
  auto wc = std::make_shared<std::vector<double>>(g.cout * g.cin * krows * kx);
  for (std::size_t oc = 0; oc < g.cout * g.cin; ++oc)
    for (std::size_t kz = 0; kz < dg.kn[0]; ++kz)
      for (std::size_t ky = 0; ky < dg.kn[1]; ++ky)
        std::copy_n(w.data().data() + oc * g.k_vol + ((kz + dg.klo[0]) * g.k[1] + ky + dg.klo[1]) * g.k[2] + dg.klo[2],
                    kx, wc->data() + ((oc * dg.kn[0] + kz) * dg.kn[1] + ky) * kx);

  std::vector<double> out(g.batch * g.cout * g.out_vol), acc(dg.len);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* src = xp->data() + (n * g.cin + ci) * dg.vol;
        const double* wk = wc->data() + (co * g.cin + ci) * krows * kx;
        for (std::size_t kz = 0; kz < dg.kn[0]; ++kz)
          for (std::size_t ky = 0; ky < dg.kn[1]; ++ky)
            row_taps(acc.data(), src + dg.wide(kz, ky, 0), wk + (kz * dg.kn[1] + ky) * kx, kx, dg.len);
      }
      const double b = bias ? (*bias)[co] : 0.0;
      double* dst = out.data() + (n * g.cout + co) * g.out_vol;
      for (std::size_t oz = 0; oz < g.out[0]; ++oz)
        for (std::size_t oy = 0; oy < g.out[1]; ++oy)
          for (std::size_t ox = 0; ox < g.out[2]; ++ox) *dst++ = acc[dg.wide(oz, oy, ox)] + b;
    }
  conv_mac_counter() += static_cast<std::uint64_t>(g.batch) * g.cout * g.rows() * g.out_vol;

  const Tensor no_bias = Tensor::scalar(0.0);
  const Tensor& b_in = bias ? *bias : no_bias;
  return finish(op, Tensor(std::move(out_shape), std::move(out)), {&x, &w, &b_in}, [&] {
    return [xp, wc, g, dg, has_bias = bias.has_value()](std::span<const double> grad, const GradSink& sink) {
      auto dx = sink.buffer(0);
      auto dw = sink.buffer(1);
      auto db = has_bias ? sink.buffer(2) : std::span<double>{};
      const std::size_t krows = dg.kn[0] * dg.kn[1], kx = dg.kn[2];
      std::vector<double> dxp(dx.empty() ? 0 : g.batch * g.cin * dg.vol, 0.0);
      // wide gradient with kx - 1 leading zeros, so the input gradient is a
      // correlation with the reversed kernel row
      std::vector<double> gpad(dg.len + 2 * (kx - 1), 0.0), wrev(kx);
      double* gw = gpad.data() + (kx - 1);
      const std::size_t dlen = dg.len + kx - 1;
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* gp = grad.data() + (n * g.cout + co) * g.out_vol;
          for (std::size_t oz = 0, p = 0; oz < g.out[0]; ++oz)
            for (std::size_t oy = 0; oy < g.out[1]; ++oy)
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) gw[dg.wide(oz, oy, ox)] = gp[p++];
          if (!db.empty()) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.out_vol; ++i) s += gp[i];
            db[co] += s;
          }
          const Eigen::Map<const Eigen::VectorXd> gv(gw, static_cast<Eigen::Index>(dg.len));
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const std::size_t plane = (n * g.cin + ci) * dg.vol;
            const std::size_t wbase = (co * g.cin + ci) * krows;
            for (std::size_t kz = 0; kz < dg.kn[0]; ++kz)
              for (std::size_t ky = 0; ky < dg.kn[1]; ++ky) {
                const std::size_t row = dg.wide(kz, ky, 0);
                const std::size_t wr = (wbase + kz * dg.kn[1] + ky) * kx;
                if (!dw.empty()) {
                  double* d = dw.data() + (co * g.cin + ci) * g.k_vol +
                              ((kz + dg.klo[0]) * g.k[1] + ky + dg.klo[1]) * g.k[2] + dg.klo[2];
                  for (std::size_t t = 0; t < kx; ++t)
                    d[t] += gv.dot(Eigen::Map<const Eigen::VectorXd>(xp->data() + plane + row + t,
                                                                    static_cast<Eigen::Index>(dg.len)));
                }
                if (!dx.empty()) {
                  for (std::size_t t = 0; t < kx; ++t) wrev[t] = (*wc)[wr + kx - 1 - t];
                  row_taps(dxp.data() + plane + row, gpad.data(), wrev.data(), kx, dlen);
                }
              }
          }
        }
      if (dx.empty()) return;
      for (std::size_t nc = 0; nc < g.batch * g.cin; ++nc) {
        const double* src = dxp.data() + nc * dg.vol;
        double* dst = dx.data() + nc * g.in_vol;
        dg.rows(g, [&](std::size_t i, std::size_t o, std::size_t run) {
          for (std::size_t r = 0; r < run; ++r) dst[i + r] += src[o + r];
        });
      }
    };
  });
}

template <std::size_t D>
Tensor conv_nd(const char* op, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
               const ConvParams<D>& p) {
  const ConvGeom geom = make_geom<D>(op, x, w, p);
  Shape out_shape{geom.batch, geom.cout};
  for (std::size_t d = 0; d < D; ++d) out_shape.push_back(geom.out[3 - D + d]);
  if (use_direct(geom)) return direct_conv(op, x, w, bias, geom, std::move(out_shape));
  return conv_impl(op, x, w, bias, geom, std::move(out_shape));
}

} // namespace detail

/// Cross-correlation (no kernel flip) of x[B x C_in x T] with
/// w[C_out x C_in x K].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, std::size_t stride = 1,
                     std::size_t pad = 0, std::size_t dilation = 1) {
  return detail::conv_nd<1>("conv1d", x, w, bias, ConvParams<1>::uniform(stride, pad, dilation));
}

/// x[B x C_in x H x W], w[C_out x C_in x Kh x Kw].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, std::size_t stride = 1,
                     std::size_t pad = 0) {
  return detail::conv_nd<2>("conv2d", x, w, bias, ConvParams<2>::uniform(stride, pad));
}

/// x[B x C_in x T x H x W], w[C_out x C_in x Kt x Kh x Kw].
inline Tensor conv3d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                     std::array<std::size_t, 3> stride, std::array<std::size_t, 3> pad) {
  ConvParams<3> p;
  p.stride = stride;
  p.pad = pad;
  p.dilation = {1, 1, 1};
  return detail::conv_nd<3>("conv3d", x, w, bias, p);
}

} // namespace pyrlip
