#pragma once

#include <string>
#include <vector>

#include "pyrlip/core/conv.hpp"
#include "pyrlip/core/ops.hpp"
#include "pyrlip/nn/params.hpp"

namespace pyrlip::nn {

/// Simplified multi-scale temporal backend.
struct BackendConfig {
  std::size_t blocks = 3;
  std::vector<std::size_t> branch_kernels{3, 5, 7};
  std::size_t hidden = 64;
  double dropout = 0.2;

  void validate() const {
    if (blocks == 0) throw ConfigError("backend: need at least one block");
    if (branch_kernels.empty()) throw ConfigError("backend: need at least one branch");
    for (auto k : branch_kernels)
      if (k % 2 == 0) throw ConfigError("backend: branch kernel sizes must be odd, got " + std::to_string(k));
    if (hidden < branch_kernels.size())
      throw ConfigError("backend: hidden width " + std::to_string(hidden) + " is smaller than the branch count");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("backend: dropout must lie in [0, 1)");
  }

  /// Output channels of branch i: hidden / n, the first hidden % n
  /// branches taking one extra channel.
  std::size_t branch_width(std::size_t i) const {
    const std::size_t n = branch_kernels.size();
    return hidden / n + (i < hidden % n ? 1 : 0);
  }
};

/// Parallel same-padded temporal convs -> concat -> BN -> ReLU -> dropout,
/// plus a residual (1x1 temporal conv when the width changes).
class TemporalBlock {
public:
  TemporalBlock(std::string prefix, std::size_t c_in, BackendConfig cfg)
      : prefix_(std::move(prefix)), c_in_(c_in), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  bool projects() const { return c_in_ != cfg_.hidden; }

  void init(ParamStore& store, Rng& rng) const {
    for (std::size_t i = 0; i < cfg_.branch_kernels.size(); ++i) {
      const std::size_t k = cfg_.branch_kernels[i];
      store.add(branch_name(i), kaiming({cfg_.branch_width(i), c_in_, k}, c_in_ * k, rng));
    }
    add_batchnorm(store, prefix_ + ".bn", cfg_.hidden);
    if (projects()) {
      store.add(prefix_ + ".residual.weight", kaiming({cfg_.hidden, c_in_, 1}, c_in_, rng));
      store.add(prefix_ + ".residual.bias", Tensor::zeros({cfg_.hidden}));
    }
  }

  /// x[B x C_in x T] -> [B x hidden x T].
  Tensor forward(Context& ctx, const Tensor& x) const {
    std::vector<Tensor> branches;
    for (std::size_t i = 0; i < cfg_.branch_kernels.size(); ++i) {
      const std::size_t k = cfg_.branch_kernels[i];
      branches.push_back(conv1d(x, ctx.param(branch_name(i)), std::nullopt, 1, (k - 1) / 2));
    }
    Tensor h = branches.size() == 1 ? branches.front() : concat_channels(branches);
    h = relu(apply_batchnorm(ctx, prefix_ + ".bn", h));
    if (ctx.training() && cfg_.dropout > 0.0) {
      if (!ctx.rng()) throw ConfigError("backend: train-mode dropout needs a random stream");
      h = dropout(h, cfg_.dropout, *ctx.rng());
    }
    const Tensor residual =
        projects() ? conv1d(x, ctx.param(prefix_ + ".residual.weight"), ctx.param(prefix_ + ".residual.bias")) : x;
    return add(h, residual);
  }

  std::string branch_name(std::size_t i) const { return prefix_ + ".branch" + std::to_string(i) + ".weight"; }

private:
  std::string prefix_;
  std::size_t c_in_;
  BackendConfig cfg_;
};

/// F2[B x T x C1] -> F3[B x T x C2].
class Backend {
public:
  Backend(BackendConfig cfg, std::size_t c_in, std::string prefix = "backend") : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t b = 0; b < cfg_.blocks; ++b)
      blocks_.emplace_back(prefix + ".block" + std::to_string(b), b == 0 ? c_in : cfg_.hidden, cfg_);
  }

  void init(ParamStore& store, Rng& rng) const {
    for (const auto& b : blocks_) b.init(store, rng);
  }

  Tensor forward(Context& ctx, const Tensor& f2) const {
    if (f2.rank() != 3) throw ShapeError("backend: expected [B x T x C], got " + to_string(f2.shape()));
    Tensor h = permute(f2, {0, 2, 1});
    for (const auto& b : blocks_) h = b.forward(ctx, h);
    return permute(h, {0, 2, 1});
  }

  const BackendConfig& config() const { return cfg_; }

private:
  BackendConfig cfg_;
  std::vector<TemporalBlock> blocks_;
};

} // namespace pyrlip::nn
