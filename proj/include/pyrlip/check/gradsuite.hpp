#pragma once

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "pyrlip/core/gradcheck.hpp"
#include "pyrlip/model/model.hpp"
#include "pyrlip/nn/mstcn.hpp"
#include "pyrlip/nn/pyconv.hpp"
#include "pyrlip/nn/resnet.hpp"

namespace pyrlip::check {

/// One gradient-check subject. `run` draws a random tiny configuration from
/// the stream and checks it.
struct GradCase {
  std::string name;
  std::string scope; // "op", "layer" or "model"
  std::function<GradCheckResult(Rng&, const GradCheckOptions&)> run;

};

struct CaseReport {
  std::string name, scope;
  std::size_t trials = 0, checked = 0, skipped_kinks = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

namespace detail {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_int(hi - lo + 1); }

/// Checks op(params...) reduced by a fixed random projection.
inline GradCheckResult check_fn(const std::function<Tensor(std::span<const Tensor>)>& fn, const std::vector<Tensor>& params,
                                Rng& rng, const GradCheckOptions& opt) {
  std::vector<Tensor> detached;
  for (const auto& p : params) detached.push_back(p.detach());
  const Tensor probe = fn(detached);
  const Tensor r = Tensor::randn(probe.shape(), rng);
  return grad_check([&](std::span<const Tensor> ps) { return random_projection(fn(ps), r); }, params, rng, opt);
}

/// Checks a parameterized module: gradients with respect to its input and
/// every trainable entry of `store`.
inline GradCheckResult check_module(const nn::ParamStore& store, const Tensor& x,
                                    const std::function<Tensor(nn::Context&, const Tensor&)>& fwd, Rng& rng,
                                    const GradCheckOptions& opt, NormMode mode = NormMode::train) {
  const auto names = store.names(true);
  std::vector<Tensor> params{x};
  for (const auto& n : names) params.push_back(store.get(n));
  const std::uint64_t drop_seed = rng.next_u64();
  auto fn = [&](std::span<const Tensor> ps) {
    nn::ParamStore local = store;
    Rng drop(drop_seed);
    nn::Context ctx(local, nullptr, mode, &drop);
    for (std::size_t i = 0; i < names.size(); ++i) ctx.bind(names[i], ps[i + 1]);
    return fwd(ctx, ps[0]);
  };
  return check_fn(fn, params, rng, opt);
}

inline std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t t) {
  std::vector<std::uint8_t> m(t);
  for (auto& v : m) v = rng.uniform() < 0.6 ? 1 : 0;
  m[rng.uniform_int(t)] = 1;
  return m;
}

/// y = x * x whose backward forgets the factor 2; a negative control.
inline Tensor broken_square(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return pyrlip::detail::finish("broken_square", Tensor(x.shape(), std::move(out)), {&x}, [&] {
    return [xv = x.storage()](std::span<const double> g, const GradSink& sink) {
      auto d = sink.buffer(0);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (*xv)[i];
    };
  });
}

inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t lo = 1, std::size_t hi = 4) {
  Shape s(rank);
  for (auto& d : s) d = pick(rng, lo, hi);
  return s;
}

} // namespace detail

/// Every registered case. With `include_broken`, a deliberately wrong
/// backward is appended.
inline std::vector<GradCase> grad_cases(bool include_broken = false) {
  using detail::check_fn;
  using detail::check_module;
  using detail::pick;
  using detail::random_shape;
  using Ps = std::span<const Tensor>;
  std::vector<GradCase> c;
  auto op = [&c](std::string name, std::function<GradCheckResult(Rng&, const GradCheckOptions&)> f) { c.push_back({std::move(name), "op", std::move(f)}); };
  auto layer = [&c](std::string name, std::function<GradCheckResult(Rng&, const GradCheckOptions&)> f) {
    c.push_back({std::move(name), "layer", std::move(f)});
  };

  auto binary = [](auto f) {
    return [f](Rng& rng, const GradCheckOptions& opt) {
      const Shape s = random_shape(rng, pick(rng, 1, 3));
      return check_fn([f](Ps p) { return f(p[0], p[1]); }, {Tensor::randn(s, rng), Tensor::randn(s, rng)}, rng, opt);
    };
  };
  op("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); }));
  op("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  op("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  op("scale", [](Rng& rng, const GradCheckOptions& opt) {
    const double s = rng.normal(0.0, 2.0);
    return check_fn([s](Ps p) { return scale(p[0], s); }, {Tensor::randn(random_shape(rng, 2), rng)}, rng, opt);
  });
  op("add_scalar", [](Rng& rng, const GradCheckOptions& opt) {
    const double s = rng.normal(0.0, 2.0);
    return check_fn([s](Ps p) { return add_scalar(p[0], s); }, {Tensor::randn(random_shape(rng, 3), rng)}, rng, opt);
  });
  op("relu", [](Rng& rng, const GradCheckOptions& opt) {
    return check_fn([](Ps p) { return relu(p[0]); }, {Tensor::randn(random_shape(rng, 3), rng)}, rng, opt);
  });
  op("matmul", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
    return check_fn([](Ps p) { return matmul(p[0], p[1]); }, {Tensor::randn({m, k}, rng), Tensor::randn({k, n}, rng)}, rng, opt);
  });
  op("bmm", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 3), m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    return check_fn([](Ps p) { return bmm(p[0], p[1]); }, {Tensor::randn({b, m, k}, rng), Tensor::randn({b, k, n}, rng)},
                    rng, opt);
  });
  auto reduction = [](ReduceKind kind) {
    return [kind](Rng& rng, const GradCheckOptions& opt) {
      const Shape s = random_shape(rng, pick(rng, 1, 4));
      const std::size_t axis = rng.uniform_int(s.size());
      return check_fn([kind, axis](Ps p) { return reduce(kind, p[0], axis); }, {Tensor::randn(s, rng)}, rng, opt);
    };
  };
  op("reduce_sum", reduction(ReduceKind::sum));
  op("reduce_mean", reduction(ReduceKind::mean));
  op("reduce_max", reduction(ReduceKind::max));
  op("softmax", [](Rng& rng, const GradCheckOptions& opt) {
    const Shape s = random_shape(rng, pick(rng, 1, 3));
    const std::size_t axis = rng.uniform_int(s.size());
    return check_fn([axis](Ps p) { return softmax(p[0], axis); }, {Tensor::randn(s, rng, 0.0, 2.0)}, rng, opt);
  });
  op("linear", [](Rng& rng, const GradCheckOptions& opt) {
    Shape xs = random_shape(rng, pick(rng, 1, 3));
    const std::size_t din = xs.back(), dout = pick(rng, 1, 5);
    return check_fn([](Ps p) { return linear(p[0], p[1], p[2]); },
                    {Tensor::randn(xs, rng), Tensor::randn({din, dout}, rng), Tensor::randn({dout}, rng)}, rng, opt);
  });
  op("concat", [](Rng& rng, const GradCheckOptions& opt) {
    const Shape base = random_shape(rng, pick(rng, 1, 3));
    const std::size_t axis = rng.uniform_int(base.size()), parts = pick(rng, 1, 3);
    std::vector<Tensor> ts;
    for (std::size_t i = 0; i < parts; ++i) {
      Shape s = base;
      s[axis] = pick(rng, 1, 3);
      ts.push_back(Tensor::randn(s, rng));
    }
    return check_fn([axis](Ps p) { return concat(std::vector<Tensor>(p.begin(), p.end()), axis); }, ts, rng, opt);
  });
  op("reshape", [](Rng& rng, const GradCheckOptions& opt) {
    const Shape s = random_shape(rng, 3);
    return check_fn([s](Ps p) { return reshape(p[0], {s[2], s[0] * s[1]}); }, {Tensor::randn(s, rng)}, rng, opt);
  });
  op("permute", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t r = pick(rng, 1, 4);
    std::vector<std::size_t> axes(r);
    for (std::size_t i = 0; i < r; ++i) axes[i] = i;
    for (std::size_t i = 0; i + 1 < r; ++i) std::swap(axes[i], axes[i + rng.uniform_int(r - i)]);
    return check_fn([axes](Ps p) { return permute(p[0], axes); }, {Tensor::randn(random_shape(rng, r), rng)}, rng, opt);
  });
  op("temporal_mean", [](Rng& rng, const GradCheckOptions& opt) {
    const Shape s = random_shape(rng, 3, 1, 5);
    std::vector<std::vector<std::uint8_t>> masks;
    if (rng.uniform() < 0.5)
      for (std::size_t b = 0; b < s[0]; ++b) masks.push_back(detail::random_mask(rng, s[1]));
    return check_fn([masks](Ps p) { return temporal_mean(p[0], masks); }, {Tensor::randn(s, rng)}, rng, opt);
  });
  op("conv1d", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 4), k = pick(rng, 1, 5);
    const std::size_t stride = pick(rng, 1, 2), dil = pick(rng, 1, 2), pad = pick(rng, 0, k);
    const std::size_t len = pick(rng, dil * (k - 1) + 1, dil * (k - 1) + 40);
    return check_fn([=](Ps p) { return conv1d(p[0], p[1], p[2], stride, pad, dil); },
                    {Tensor::randn({b, ci, len}, rng), Tensor::randn({co, ci, k}, rng), Tensor::randn({co}, rng)}, rng, opt);
  });
  op("conv2d", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 10), k = 2 * pick(rng, 0, 3) + 1;
    const std::size_t stride = rng.uniform() < 0.5 ? 1 : 2, pad = pick(rng, 0, (k - 1) / 2 + 1);
    const std::size_t h = pick(rng, std::max<std::size_t>(1, k > 2 * pad ? k - 2 * pad : 1), 9), w = pick(rng, h, 10);
    return check_fn([=](Ps p) { return conv2d(p[0], p[1], p[2], stride, pad); },
                    {Tensor::randn({b, ci, h, w}, rng), Tensor::randn({co, ci, k, k}, rng), Tensor::randn({co}, rng)}, rng, opt);
  });
  op("conv3d", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 2), co = pick(rng, 1, 3);
    std::array<std::size_t, 3> k{}, stride{}, pad{};
    Shape xs{b, ci, 0, 0, 0};
    for (std::size_t d = 0; d < 3; ++d) {
      k[d] = pick(rng, 1, 3);
      stride[d] = pick(rng, 1, 2);
      pad[d] = pick(rng, 0, 1);
      xs[2 + d] = pick(rng, k[d], k[d] + 4);
    }
    return check_fn([=](Ps p) { return conv3d(p[0], p[1], p[2], stride, pad); },
                    {Tensor::randn(xs, rng), Tensor::randn({co, ci, k[0], k[1], k[2]}, rng), Tensor::randn({co}, rng)},
                    rng, opt);
  });
  op("batchnorm", [](Rng& rng, const GradCheckOptions& opt) {
    Shape s = random_shape(rng, pick(rng, 2, 4), 1, 4);
    s[0] = pick(rng, 2, 4);
    const std::size_t ch = s[1];
    const NormMode mode = rng.uniform() < 0.75 ? NormMode::train : NormMode::eval;
    const Tensor rm = Tensor::randn({ch}, rng), rv = Tensor::uniform({ch}, rng, 0.5, 2.0);
    return check_fn(
        [=](Ps p) {
          Tensor m = rm, v = rv;
          return batchnorm(p[0], p[1], p[2], m, v, mode);
        },
        {Tensor::randn(s, rng, 0.5, 2.0), Tensor::uniform({ch}, rng, 0.5, 1.5), Tensor::randn({ch}, rng)}, rng, opt);
  });
  op("cross_entropy", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 4), v = pick(rng, 2, 6);
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = rng.uniform_int(v);
    return check_fn([labels](Ps p) { return cross_entropy(p[0], labels); }, {Tensor::randn({b, v}, rng)}, rng, opt);
  });

  // ---- layers
  layer("standard_conv", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t ci = pick(rng, 1, 4), co = pick(rng, 1, 6), stride = pick(rng, 1, 2);
    nn::ParamStore store;
    store.add("w", Tensor::randn({co, ci, 3, 3}, rng, 0.0, 0.5));
    const Tensor x = Tensor::randn({pick(rng, 1, 2), ci, pick(rng, 3, 8), pick(rng, 3, 8)}, rng);
    return check_module(store, x, [stride](nn::Context& ctx, const Tensor& in) {
      return conv2d(in, ctx.param("w"), std::nullopt, stride, 1);
    }, rng, opt);
  });
  auto pyramid = [](bool hierarchical) {
    return [hierarchical](Rng& rng, const GradCheckOptions& opt) {
      const std::size_t levels = pick(rng, 1, 3);
      std::vector<std::size_t> kernels;
      for (std::size_t i = 0; i < levels; ++i) kernels.push_back(2 * i + 3);
      const std::size_t ci = pick(rng, 1, 3), co = levels * pick(rng, 1, 2), stride = pick(rng, 1, 2);
      const nn::PyramidConv conv("p", ci, nn::PyConvConfig::equal_split(co, kernels, stride, hierarchical));
      nn::ParamStore store;
      conv.init(store, rng);
      const Tensor x = Tensor::randn({pick(rng, 1, 2), ci, pick(rng, 3, 7), pick(rng, 3, 7)}, rng);
      return check_module(store, x, [&conv](nn::Context& ctx, const Tensor& in) { return conv.forward(ctx, in); }, rng, opt);
    };
  };
  layer("pyconv", pyramid(false));
  layer("hpconv", pyramid(true));
  layer("basic_block", [](Rng& rng, const GradCheckOptions& opt) {
    const nn::SecondConv kinds[] = {nn::SecondConv::standard, nn::SecondConv::pyconv, nn::SecondConv::hpconv};
    const nn::SecondConv kind = kinds[rng.uniform_int(3)];
    const std::size_t ci = 2 * pick(rng, 1, 2), co = 2 * pick(rng, 1, 2), stride = pick(rng, 1, 2);
    const nn::BasicBlock block("b", ci, co, stride, kind, {3, 5});
    nn::ParamStore store;
    block.init(store, rng);
    const Tensor x = Tensor::randn({2, ci, pick(rng, 3, 6), pick(rng, 3, 6)}, rng);
    return check_module(store, x, [&block](nn::Context& ctx, const Tensor& in) { return block.forward(ctx, in); }, rng, opt);
  });
  layer("stem3d", [](Rng& rng, const GradCheckOptions& opt) {
    nn::FrontendConfig cfg;
    cfg.stem_kernel = {3, 3, 3};
    cfg.stem_pad = {1, 1, 1};
    cfg.stem_stride = {1, pick(rng, 1, 2), pick(rng, 1, 2)};
    cfg.stage_widths = {pick(rng, 1, 3)};
    cfg.stage_strides = {1};
    cfg.blocks_per_stage = 1;
    const std::size_t h = pick(rng, 4, 7), w = pick(rng, 4, 7);
    const nn::Frontend fe(cfg, h, w);
    nn::ParamStore store;
    fe.init(store, rng);
    const Tensor x = Tensor::randn({pick(rng, 1, 2), 1, pick(rng, 2, 4), h, w}, rng);
    return check_module(store, x, [&fe](nn::Context& ctx, const Tensor& in) { return fe.stem(ctx, in); }, rng, opt);
  });
  layer("mstcn_block", [](Rng& rng, const GradCheckOptions& opt) {
    nn::BackendConfig cfg;
    cfg.branch_kernels = {3, 5};
    if (rng.uniform() < 0.5) cfg.branch_kernels.push_back(7);
    cfg.hidden = pick(rng, cfg.branch_kernels.size(), 7);
    cfg.dropout = rng.uniform() < 0.5 ? 0.0 : 0.2;
    const std::size_t ci = pick(rng, 1, 6);
    const nn::TemporalBlock block("t", ci, cfg);
    nn::ParamStore store;
    block.init(store, rng);
    const Tensor x = Tensor::randn({2, ci, pick(rng, 3, 9)}, rng);
    return check_module(store, x, [&block](nn::Context& ctx, const Tensor& in) { return block.forward(ctx, in); }, rng, opt);
  });
  layer("consensus_average", [](Rng& rng, const GradCheckOptions& opt) {
    const Shape s = random_shape(rng, 3, 1, 6);
    std::vector<model::BoundaryMask> masks;
    if (rng.uniform() < 0.5)
      for (std::size_t b = 0; b < s[0]; ++b) masks.push_back(detail::random_mask(rng, s[1]));
    return check_fn([masks](Ps p) { return model::consensus_average(p[0], masks); }, {Tensor::randn(s, rng)}, rng, opt);
  });
  layer("consensus_attention", [](Rng& rng, const GradCheckOptions& opt) {
    model::AttentionGeometry g;
    g.heads = pick(rng, 1, 3);
    g.key_dim = pick(rng, 1, 4);
    g.value_dim = pick(rng, 1, 4);
    g.sum_query = rng.uniform() < 0.3;
    const std::size_t b = pick(rng, 1, 3), t = pick(rng, 2, 6), c = pick(rng, 1, 5);
    std::vector<model::BoundaryMask> masks;
    if (rng.uniform() < 0.5)
      for (std::size_t i = 0; i < b; ++i) masks.push_back(detail::random_mask(rng, t));
    // projections at the model's init scale; unit-variance weights with a
    // summed query saturate the softmax and drown the probes in round-off
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    return check_fn(
        [g, masks](Ps p) { return model::consensus_attention(p[0], {p[1], p[2], p[3], p[4]}, g, masks).f4; },
        {Tensor::randn({b, t, c}, rng), Tensor::randn({c, g.heads * g.key_dim}, rng, 0.0, sd),
         Tensor::randn({c, g.heads * g.key_dim}, rng, 0.0, sd), Tensor::randn({c, g.heads * g.value_dim}, rng, 0.0, sd),
         Tensor::randn({g.heads * g.value_dim, c}, rng, 0.0, sd)},
        rng, opt);
  });
  layer("classifier", [](Rng& rng, const GradCheckOptions& opt) {
    const std::size_t b = pick(rng, 1, 4), c = pick(rng, 1, 6), v = pick(rng, 2, 6);
    return check_fn([](Ps p) { return model::classify(p[0], p[1], p[2]); },
                    {Tensor::randn({b, c}, rng), Tensor::randn({c, v}, rng), Tensor::randn({v}, rng)}, rng, opt);
  });

  c.push_back({"model", "model", [](Rng& rng, const GradCheckOptions& opt) {
    model::ModelConfig cfg;
    const nn::SecondConv kinds[] = {nn::SecondConv::standard, nn::SecondConv::pyconv, nn::SecondConv::hpconv};
    cfg.frontend.second_conv = kinds[rng.uniform_int(3)];
    cfg.frontend.stem_kernel = {3, 3, 3};
    cfg.frontend.stem_pad = {1, 1, 1};
    cfg.frontend.stage_widths = {2, 4};
    cfg.frontend.stage_strides = {1, 2};
    cfg.frontend.blocks_per_stage = 1;
    cfg.frontend.pyramid_kernels = {3, 5};
    cfg.backend.blocks = 1;
    cfg.backend.branch_kernels = {3, 5};
    cfg.backend.hidden = 4;
    cfg.consensus = rng.uniform() < 0.5 ? model::ConsensusKind::average : model::ConsensusKind::self_attention;
    cfg.boundary = rng.uniform() < 0.5 ? model::BoundaryMode::off : model::BoundaryMode::manual;
    cfg.attention = {2, 3, 3, false};
    cfg.vocab = pick(rng, 2, 4);
    cfg.frames = pick(rng, 3, 5);
    cfg.height = cfg.width = pick(rng, 6, 8);
    cfg.seed = rng.next_u64();
    const model::LipReadingModel m(cfg);
    const nn::ParamStore store = m.make_params();
    const std::size_t batch = 2;
    std::vector<model::BoundaryMask> masks;
    for (std::size_t b = 0; b < batch; ++b) masks.push_back(detail::random_mask(rng, cfg.frames));
    std::vector<std::size_t> labels(batch);
    for (auto& l : labels) l = rng.uniform_int(cfg.vocab);
    const Tensor x = Tensor::uniform({batch, cfg.frames, cfg.height, cfg.width}, rng, 0.0, 1.0);
    return check_module(store, x, [&](nn::Context& ctx, const Tensor& in) {
      return cross_entropy(m.forward(ctx, in, masks).logits, labels);
    }, rng, opt);
  }});

  if (include_broken)
    c.push_back({"broken_square", "op", [](Rng& rng, const GradCheckOptions& opt) {
      return check_fn([](Ps p) { return detail::broken_square(p[0]); }, {Tensor::randn(random_shape(rng, 2), rng)}, rng, opt);
    }});
  return c;
}

/// Ops of differentiable_ops() that no "op" case covers.
inline std::vector<std::string> uncovered_ops(const std::vector<GradCase>& cases) {
  std::set<std::string> have;
  for (const auto& c : cases)
    if (c.scope == "op") have.insert(c.name);
  std::vector<std::string> missing;
  for (const auto& name : differentiable_ops())
    if (!have.count(name)) missing.push_back(name);
  return missing;
}

/// Runs `trials` random configurations of every case in `scope` ("layer"
/// covers ops and layers, "model" the full model, "all" both).
inline std::vector<CaseReport> run_grad_suite(const std::string& scope, std::size_t trials, std::uint64_t seed,
                                              bool include_broken = false, const GradCheckOptions& opt = {}) {
  std::vector<CaseReport> out;
  const Rng root(seed);
  std::uint64_t salt = 0;
  for (const auto& c : grad_cases(include_broken)) {
    ++salt;
    const bool wanted = scope == "all" || (scope == "model" ? c.scope == "model" : c.scope != "model");
    if (!wanted) continue;
    CaseReport r{c.name, c.scope};
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = root.fork(salt * 1000003 + t);
      const auto res = c.run(rng, opt);
      if (res.max_rel_error > r.max_rel_error) {
        r.worst_analytic = res.worst_analytic;
        r.worst_numeric = res.worst_numeric;
      }
      r.max_rel_error = std::max(r.max_rel_error, res.max_rel_error);
      r.checked += res.checked;
      r.skipped_kinks += res.skipped_kinks;
      ++r.trials;
    }
    out.push_back(r);
  }
  return out;
}

} // namespace pyrlip::check
