#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "pyrlip/core/ops.hpp"
#include "pyrlip/core/tape.hpp"

namespace pyrlip {

struct GradCheckOptions {
  double eps = 1e-5;
  // coordinates sampled per parameter tensor (all of them if the tensor is smaller)
  std::size_t coords_per_param = 6;
  // lower bound on the denominator of the relative error, per unit of |f|
  // (the round-off in a difference quotient grows with |f| / eps)
  double denom_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // coordinates whose +/- eps probes straddle a relu or max switch point
  std::size_t skipped_kinks = 0;
  // the coordinate behind max_rel_error
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t worst_param = 0, worst_coord = 0;

  void merge(const GradCheckResult& o) {
    if (o.max_rel_error > max_rel_error) {
      worst_analytic = o.worst_analytic;
      worst_numeric = o.worst_numeric;
      worst_param = o.worst_param;
      worst_coord = o.worst_coord;
    }
    max_rel_error = std::max(max_rel_error, o.max_rel_error);
    checked += o.checked;
    skipped_kinks += o.skipped_kinks;
  }
};

/// Scalar objective of the parameters. The parameters it receives may be
/// attached to a tape; it must build its result from them with tape ops.
using Objective = std::function<Tensor(std::span<const Tensor> params)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Compares reverse-mode gradients with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) on a random subsample of coordinates.
/// A coordinate is skipped when the probes land in different smooth pieces
/// of f (detected through the tape's kink hash); those are counted.
inline GradCheckResult grad_check(const Objective& f, const std::vector<Tensor>& params, Rng& rng,
                                  GradCheckOptions opt = {}) {
  Tape tape;
  std::vector<Tensor> watched;
  for (const auto& p : params) watched.push_back(tape.watch(p));
  const Tensor loss = f(watched);
  tape.backward(loss);
  const std::uint64_t base_hash = tape.kink_hash();
  const double floor = opt.denom_floor * std::max(1.0, std::fabs(loss.item()));

  auto probe = [&](std::size_t which, std::size_t coord, double delta, std::uint64_t& hash) {
    Tape t;
    std::vector<Tensor> ps;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i].detach();
      if (i == which) {
        auto d = p.mutable_data();
        d[coord] += delta;
      }
      ps.push_back(t.watch(p));
    }
    const double v = f(ps).item();
    hash = t.kink_hash();
    return v;
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor analytic = tape.grad(watched[i]);
    std::vector<std::size_t> coords(params[i].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < coords.size(); ++k)
      std::swap(coords[k], coords[k + rng.uniform_int(coords.size() - k)]);
    coords.resize(std::min(coords.size(), opt.coords_per_param));
    for (std::size_t c : coords) {
      std::uint64_t hp = 0, hm = 0;
      const double fp = probe(i, c, opt.eps, hp);
      const double fm = probe(i, c, -opt.eps, hm);
      if (hp != base_hash || hm != base_hash) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double rel = relative_error(analytic[c], numeric, floor);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_analytic = analytic[c];
        result.worst_numeric = numeric;
        result.worst_param = i;
        result.worst_coord = c;
      }
      ++result.checked;
    }
  }
  return result;
}

/// Random linear functional sum(out * r) used to reduce a tensor output to
/// a scalar objective.
inline Tensor random_projection(const Tensor& out, const Tensor& r) { return sum_all(mul(out, r)); }

} // namespace pyrlip
