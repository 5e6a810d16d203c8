#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. Deliberately written as plain loops, sharing no code with the
// library beyond the Tensor container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "pyrlip/core/tensor.hpp"

namespace oracle {

using pyrlip::Tensor;

/// Direct convolution over three spatial axes; x[B x Ci x D x H x W],
/// w[Co x Ci x Kd x Kh x Kw].
inline Tensor conv3d(const Tensor& x, const Tensor& w, const std::vector<double>& bias, std::array<std::size_t, 3> stride,
                     std::array<std::size_t, 3> pad, std::array<std::size_t, 3> dil = {1, 1, 1}) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0), Kd = w.dim(2), Kh = w.dim(3), Kw = w.dim(4);
  auto out_len = [](std::size_t n, std::size_t k, std::size_t s, std::size_t p, std::size_t d) {
    return (n + 2 * p - (d * (k - 1) + 1)) / s + 1;
  };
  const std::size_t Od = out_len(D, Kd, stride[0], pad[0], dil[0]), Oh = out_len(H, Kh, stride[1], pad[1], dil[1]),
                    Ow = out_len(W, Kw, stride[2], pad[2], dil[2]);
  std::vector<double> y(B * Co * Od * Oh * Ow, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t od = 0; od < Od; ++od)
        for (std::size_t oh = 0; oh < Oh; ++oh)
          for (std::size_t ow = 0; ow < Ow; ++ow) {
            double s = bias.empty() ? 0.0 : bias[co];
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t kd = 0; kd < Kd; ++kd)
                for (std::size_t kh = 0; kh < Kh; ++kh)
                  for (std::size_t kw = 0; kw < Kw; ++kw) {
                    const long id = long(od * stride[0] + kd * dil[0]) - long(pad[0]);
                    const long ih = long(oh * stride[1] + kh * dil[1]) - long(pad[1]);
                    const long iw = long(ow * stride[2] + kw * dil[2]) - long(pad[2]);
                    if (id < 0 || ih < 0 || iw < 0 || id >= long(D) || ih >= long(H) || iw >= long(W)) continue;
                    s += x[(((b * Ci + ci) * D + id) * H + ih) * W + iw] *
                         w[(((co * Ci + ci) * Kd + kd) * Kh + kh) * Kw + kw];
                  }
            y[(((b * Co + co) * Od + od) * Oh + oh) * Ow + ow] = s;
          }
  return Tensor({B, Co, Od, Oh, Ow}, std::move(y));
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const std::vector<double>& bias, std::size_t stride,
                     std::size_t pad) {
  const Tensor x5({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)}, x.values());
  const Tensor w5({w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)}, w.values());
  const Tensor y = conv3d(x5, w5, bias, {1, stride, stride}, {0, pad, pad});
  return Tensor({y.dim(0), y.dim(1), y.dim(3), y.dim(4)}, y.values());
}

inline Tensor conv1d(const Tensor& x, const Tensor& w, const std::vector<double>& bias, std::size_t stride,
                     std::size_t pad, std::size_t dilation) {
  const Tensor x5({x.dim(0), x.dim(1), 1, 1, x.dim(2)}, x.values());
  const Tensor w5({w.dim(0), w.dim(1), 1, 1, w.dim(2)}, w.values());
  const Tensor y = conv3d(x5, w5, bias, {1, 1, stride}, {0, 0, pad}, {1, 1, dilation});
  return Tensor({y.dim(0), y.dim(1), y.dim(4)}, y.values());
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> c(M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < K; ++k) c[i * N + j] += a[i * K + k] * b[k * N + j];
  return Tensor({M, N}, std::move(c));
}

/// Attention consensus for one sample, step by step. f3 is [T x C] row-major,
/// projections are [C x N*d] with head n in columns [n*d, (n+1)*d).
struct AttentionOut {
  std::vector<double> f4;                // C3
  std::vector<std::vector<double>> attn; // N x T
};

inline AttentionOut attention(const std::vector<double>& f3, std::size_t T, std::size_t C, const Tensor& wq,
                              const Tensor& wk, const Tensor& wv, const Tensor& wo, std::size_t N, std::size_t dk,
                              std::size_t dv, const std::vector<std::uint8_t>& mask = {}, bool sum_query = false) {
  std::vector<std::size_t> active;
  for (std::size_t t = 0; t < T; ++t)
    if (mask.empty() || mask[t]) active.push_back(t);
  const std::size_t C3 = wo.dim(1);
  AttentionOut out;
  out.f4.assign(C3, 0.0);
  out.attn.assign(N, std::vector<double>(T, 0.0));
  std::vector<double> concat(N * dv, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    // Q_n, K_n, V_n for every frame
    std::vector<std::vector<double>> Q(T, std::vector<double>(dk)), K(T, std::vector<double>(dk)),
        V(T, std::vector<double>(dv));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < dk; ++j) {
        double q = 0, k = 0;
        for (std::size_t c = 0; c < C; ++c) {
          q += f3[t * C + c] * wq[c * N * dk + n * dk + j];
          k += f3[t * C + c] * wk[c * N * dk + n * dk + j];
        }
        Q[t][j] = q;
        K[t][j] = k;
      }
      for (std::size_t j = 0; j < dv; ++j) {
        double v = 0;
        for (std::size_t c = 0; c < C; ++c) v += f3[t * C + c] * wv[c * N * dv + n * dv + j];
        V[t][j] = v;
      }
    }
    std::vector<double> qbar(dk, 0.0);
    for (std::size_t t : active)
      for (std::size_t j = 0; j < dk; ++j) qbar[j] += Q[t][j];
    if (!sum_query)
      for (auto& q : qbar) q /= static_cast<double>(active.size());
    std::vector<double> s(T, 0.0);
    double mx = -INFINITY;
    for (std::size_t t : active) {
      for (std::size_t j = 0; j < dk; ++j) s[t] += qbar[j] * K[t][j];
      s[t] /= std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, s[t]);
    }
    double z = 0;
    for (std::size_t t : active) z += std::exp(s[t] - mx);
    for (std::size_t t : active) out.attn[n][t] = std::exp(s[t] - mx) / z;
    for (std::size_t j = 0; j < dv; ++j)
      for (std::size_t t : active) concat[n * dv + j] += out.attn[n][t] * V[t][j];
  }
  for (std::size_t c3 = 0; c3 < C3; ++c3) {
    double h = 0;
    for (std::size_t i = 0; i < N * dv; ++i) h += concat[i] * wo[i * C3 + c3];
    double m = 0;
    for (std::size_t t : active) m += f3[t * C + c3];
    out.f4[c3] = h + m / static_cast<double>(active.size());
  }
  return out;
}

/// Levenshtein distance by plain recursion over (i, j) prefixes, no table.
inline std::size_t levenshtein(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, std::size_t i,
                               std::size_t j) {
  if (i == 0) return j;
  if (j == 0) return i;
  const std::size_t sub = levenshtein(a, b, i - 1, j - 1) + (a[i - 1] != b[j - 1] ? 1 : 0);
  const std::size_t del = levenshtein(a, b, i - 1, j) + 1;
  const std::size_t ins = levenshtein(a, b, i, j - 1) + 1;
  return std::min({sub, del, ins});
}

inline std::size_t levenshtein(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  return levenshtein(a, b, a.size(), b.size());
}

/// All binary strings of length n.
inline std::vector<std::vector<std::uint8_t>> all_strings(std::size_t n) {
  std::vector<std::vector<std::uint8_t>> out;
  for (std::size_t m = 0; m < (std::size_t{1} << n); ++m) {
    std::vector<std::uint8_t> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = (m >> i) & 1;
    out.push_back(s);
  }
  return out;
}

/// Multiply-adds of a same-padded multi-level convolution, written from the
/// layer description: level i has C_out_i outputs, reads C_in_i channels
/// with a K_i x K_i kernel on an H' x W' grid.
inline std::uint64_t pyramid_macs(std::size_t batch, std::size_t c_in, const std::vector<std::size_t>& kernels,
                                  const std::vector<std::size_t>& outs, std::size_t h, std::size_t w, bool hierarchical) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const std::size_t cin = c_in + (hierarchical && i > 0 ? outs[i - 1] : 0);
    n += std::uint64_t{batch} * outs[i] * cin * kernels[i] * kernels[i] * h * w;
  }
  return n;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

} // namespace oracle
