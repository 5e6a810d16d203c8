#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pyrlip/core/ops.hpp"

namespace pyrlip::model {

/// Per-frame relevance mask of length T (1 = frame belongs to the word).
using BoundaryMask = std::vector<std::uint8_t>;

/// Head geometry of the attention consensus.
struct AttentionGeometry {
  std::size_t heads = 8;
  std::size_t key_dim = 64;
  std::size_t value_dim = 64;
  // Use the frame sum instead of the frame mean as the query (no 1/T).
  bool sum_query = false;
};

/// Projection matrices, all heads packed column-wise: columns
/// [n*d, (n+1)*d) of wq/wk/wv belong to head n.
struct AttentionWeights {
  Tensor wq; // [C2 x N*dk]
  Tensor wk; // [C2 x N*dk]
  Tensor wv; // [C2 x N*dv]
  Tensor wo; // [N*dv x C3]
};

/// Attention weights A (N x T) and head outputs H (N x dv) of one sample.
struct AttentionRecord {
  std::size_t heads = 0, frames = 0, value_dim = 0;
  std::vector<double> weights;
  std::vector<double> head_outputs;

  double weight(std::size_t head, std::size_t t) const { return weights[head * frames + t]; }
};

struct ConsensusResult {
  Tensor f4;
  std::vector<AttentionRecord> attention;
};

/// Temporal mean of F3[B x T x C2]; with masks, the mean over active frames.
inline Tensor consensus_average(const Tensor& f3, const std::vector<BoundaryMask>& masks = {}) {
  return temporal_mean(f3, masks);
}

inline void validate_attention(const Tensor& f3, const AttentionWeights& w, const AttentionGeometry& g) {
  const std::size_t c2 = f3.dim(2);
  const Shape q{c2, g.heads * g.key_dim}, v{c2, g.heads * g.value_dim};
  if (w.wq.shape() != q || w.wk.shape() != q)
    throw ShapeError("attention consensus: query/key projections must be " + to_string(q) + ", got " +
                     to_string(w.wq.shape()) + " and " + to_string(w.wk.shape()));
  if (w.wv.shape() != v)
    throw ShapeError("attention consensus: value projection must be " + to_string(v) + ", got " + to_string(w.wv.shape()));
  if (w.wo.rank() != 2 || w.wo.dim(0) != g.heads * g.value_dim)
    throw ShapeError("attention consensus: output projection must have " + std::to_string(g.heads * g.value_dim) +
                     " rows, got " + to_string(w.wo.shape()));
  if (w.wo.dim(1) != c2)
    throw ConfigError("attention consensus: output width C3=" + std::to_string(w.wo.dim(1)) +
                      " must equal the input width C2=" + std::to_string(c2) + " for the residual mean");
}

/// Multi-head mean-query attention over time, added to the temporal mean:
///   Q_n, K_n, V_n = F3 W^Q_n, F3 W^K_n, F3 W^V_n
///   A_n = softmax_t( mean_t(Q_n) . K_{n,t} / sqrt(d_k) )
///   H_n = sum_t A_{n,t} V_{n,t}
///   F4  = concat(H_0..H_{N-1}) W^O + mean_t(F3)
/// With masks, the mean query, the softmax and the residual mean only range
/// over active frames.
inline ConsensusResult consensus_attention(const Tensor& f3, const AttentionWeights& w, const AttentionGeometry& g,
                                           const std::vector<BoundaryMask>& masks = {}) {
  if (f3.rank() != 3) throw ShapeError("attention consensus: expected [B x T x C], got " + to_string(f3.shape()));
  validate_attention(f3, w, g);
  const std::size_t batch = f3.dim(0), frames = f3.dim(1), c2 = f3.dim(2);
  const std::size_t heads = g.heads, dk = g.key_dim, dv = g.value_dim;

  const Tensor flat = reshape(f3, {batch * frames, c2});
  auto per_head = [&](const Tensor& proj, std::size_t d) {
    // [B*T x N*d] -> [B*N x T x d]
    return reshape(permute(reshape(proj, {batch, frames, heads, d}), {0, 2, 1, 3}), {batch * heads, frames, d});
  };

  Tensor query = temporal_mean(reshape(matmul(flat, w.wq), {batch, frames, heads * dk}), masks);
  if (g.sum_query) {
    std::vector<double> counts(batch * heads * dk);
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t active = frames;
      if (!masks.empty()) {
        active = 0;
        for (auto m : masks[b]) active += m ? 1 : 0;
      }
      std::fill_n(counts.begin() + static_cast<std::ptrdiff_t>(b * heads * dk), heads * dk, static_cast<double>(active));
    }
    query = mul(query, Tensor(query.shape(), std::move(counts)));
  }
  const Tensor keys = per_head(matmul(flat, w.wk), dk);
  const Tensor values = per_head(matmul(flat, w.wv), dv);

  Tensor scores = reshape(bmm(keys, reshape(query, {batch * heads, dk, 1})), {batch * heads, frames});
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dk)));
  if (!masks.empty()) {
    // masked frames get a large negative score, which exp() sends to exactly 0
    std::vector<double> bias(batch * heads * frames, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t n = 0; n < heads; ++n)
        for (std::size_t t = 0; t < frames; ++t)
          if (!masks[b][t]) bias[(b * heads + n) * frames + t] = -1e300;
    scores = add(scores, Tensor(scores.shape(), std::move(bias)));
  }
  const Tensor attn = softmax(scores, 1);
  const Tensor heads_out = reshape(bmm(reshape(attn, {batch * heads, 1, frames}), values), {batch, heads * dv});

  ConsensusResult result;
  result.f4 = add(matmul(heads_out, w.wo), temporal_mean(f3, masks));
  for (std::size_t b = 0; b < batch; ++b) {
    AttentionRecord rec;
    rec.heads = heads;
    rec.frames = frames;
    rec.value_dim = dv;
    rec.weights.assign(attn.data().begin() + static_cast<std::ptrdiff_t>(b * heads * frames),
                       attn.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * heads * frames));
    rec.head_outputs.assign(heads_out.data().begin() + static_cast<std::ptrdiff_t>(b * heads * dv),
                            heads_out.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * heads * dv));
    result.attention.push_back(std::move(rec));
  }
  return result;
}

/// Class logits of F4[B x C3] through w[C3 x V] and bias[V].
inline Tensor classifier_logits(const Tensor& f4, const Tensor& w, const Tensor& bias) { return linear(f4, w, bias); }

/// Posterior P = softmax(F4 w + bias); rows sum to 1.
inline Tensor classify(const Tensor& f4, const Tensor& w, const Tensor& bias) {
  return softmax(classifier_logits(f4, w, bias), 1);
}

} // namespace pyrlip::model
