#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pyrlip/core/conv.hpp"
#include "pyrlip/core/ops.hpp"
#include "pyrlip/nn/params.hpp"
#include "pyrlip/nn/pyconv.hpp"

namespace pyrlip::nn {

enum class SecondConv { standard, pyconv, hpconv };

inline std::string to_string(SecondConv k) {
  switch (k) {
  case SecondConv::standard: return "standard";
  case SecondConv::pyconv: return "pyconv";
  case SecondConv::hpconv: return "hpconv";
  }
  return "?";
}

inline SecondConv parse_second_conv(const std::string& s) {
  if (s == "standard") return SecondConv::standard;
  if (s == "pyconv") return SecondConv::pyconv;
  if (s == "hpconv") return SecondConv::hpconv;
  throw ConfigError("unknown second conv kind '" + s + "' (expected standard, pyconv or hpconv)");
}

/// 3-D stem followed by per-frame 2-D residual stages.
struct FrontendConfig {
  std::array<std::size_t, 3> stem_kernel{5, 7, 7};
  std::array<std::size_t, 3> stem_stride{1, 2, 2};
  std::array<std::size_t, 3> stem_pad{2, 3, 3};
  std::vector<std::size_t> stage_widths{8, 16, 32, 64};
  std::vector<std::size_t> stage_strides{1, 2, 2, 2};
  std::size_t blocks_per_stage = 2;
  SecondConv second_conv = SecondConv::standard;
  std::vector<std::size_t> pyramid_kernels{3, 5, 7, 9};

  /// ResNet-18 widths on 88x88 crops. The stem max-pool of the original
  /// network is folded into a stride-2 first stage, which gives the same
  /// per-stage extents (44 -> 22 -> 11 -> 6 -> 3).
  static FrontendConfig full_scale() {
    FrontendConfig c;
    c.stage_widths = {64, 128, 256, 512};
    c.stage_strides = {2, 2, 2, 2};
    return c;
  }

  std::size_t out_channels() const { return stage_widths.back(); }

  void validate() const {
    if (stage_widths.empty() || stage_widths.size() != stage_strides.size())
      throw ConfigError("frontend: stage_widths and stage_strides must be non-empty and of equal length");
    if (stem_stride[0] != 1) throw ConfigError("frontend: the stem must not stride over time");
    if (stem_kernel[0] != 2 * stem_pad[0] + 1) throw ConfigError("frontend: stem temporal padding must preserve T");
    if (blocks_per_stage == 0) throw ConfigError("frontend: blocks_per_stage must be >= 1");
    for (auto s : stage_strides)
      if (s == 0) throw ConfigError("frontend: stage strides must be >= 1");
    if (second_conv != SecondConv::standard)
      for (auto w : stage_widths)
        if (w % pyramid_kernels.size() != 0)
          throw ConfigError("frontend: stage width " + std::to_string(w) + " is not divisible by " +
                            std::to_string(pyramid_kernels.size()) + " pyramid levels");
  }

  /// Spatial extents after every stage for an H x W input; throws
  /// ConfigError if any conv would not fit.
  std::vector<std::array<std::size_t, 2>> stage_extents(std::size_t h, std::size_t w) const {
    std::vector<std::array<std::size_t, 2>> out;
    try {
      h = conv_out_extent(h, stem_kernel[1], stem_stride[1], stem_pad[1]);
      w = conv_out_extent(w, stem_kernel[2], stem_stride[2], stem_pad[2]);
      out.push_back({h, w});
      for (auto s : stage_strides) {
        h = conv_out_extent(h, 3, s, 1);
        w = conv_out_extent(w, 3, s, 1);
        out.push_back({h, w});
      }
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("frontend: input collapses spatially: ") + e.what());
    }
    return out;
  }
};

/// conv3x3(stride) -> BN -> ReLU -> second conv(stride 1) -> BN, plus the
/// shortcut (identity, or 1x1 conv with the block stride + BN), then ReLU.
class BasicBlock {
public:
  BasicBlock(std::string prefix, std::size_t c_in, std::size_t c_out, std::size_t stride, SecondConv second,
             std::vector<std::size_t> pyramid_kernels = {3, 5, 7, 9})
      : prefix_(std::move(prefix)), c_in_(c_in), c_out_(c_out), stride_(stride), second_(second) {
    if (second_ != SecondConv::standard)
      pyramid_.emplace(prefix_ + ".conv2", c_out_,
                       PyConvConfig::equal_split(c_out_, std::move(pyramid_kernels), 1, second_ == SecondConv::hpconv));
  }

  bool projects() const { return stride_ != 1 || c_in_ != c_out_; }

  void init(ParamStore& store, Rng& rng) const {
    store.add(prefix_ + ".conv1.weight", kaiming({c_out_, c_in_, 3, 3}, c_in_ * 9, rng));
    add_batchnorm(store, prefix_ + ".bn1", c_out_);
    if (pyramid_)
      pyramid_->init(store, rng);
    else
      store.add(prefix_ + ".conv2.weight", kaiming({c_out_, c_out_, 3, 3}, c_out_ * 9, rng));
    add_batchnorm(store, prefix_ + ".bn2", c_out_);
    if (projects()) {
      store.add(prefix_ + ".shortcut.weight", kaiming({c_out_, c_in_, 1, 1}, c_in_, rng));
      add_batchnorm(store, prefix_ + ".shortcut_bn", c_out_);
    }
  }

  Tensor forward(Context& ctx, const Tensor& x) const {
    Tensor h = conv2d(x, ctx.param(prefix_ + ".conv1.weight"), std::nullopt, stride_, 1);
    h = relu(apply_batchnorm(ctx, prefix_ + ".bn1", h));
    h = pyramid_ ? pyramid_->forward(ctx, h) : conv2d(h, ctx.param(prefix_ + ".conv2.weight"), std::nullopt, 1, 1);
    h = apply_batchnorm(ctx, prefix_ + ".bn2", h);
    Tensor shortcut = x;
    if (projects()) {
      shortcut = conv2d(x, ctx.param(prefix_ + ".shortcut.weight"), std::nullopt, stride_, 0);
      shortcut = apply_batchnorm(ctx, prefix_ + ".shortcut_bn", shortcut);
    }
    if (shortcut.shape() != h.shape())
      throw ShapeError("basic block " + prefix_ + ": shortcut " + pyrlip::to_string(shortcut.shape()) +
                       " does not match residual branch " + pyrlip::to_string(h.shape()));
    return relu(add(h, shortcut));
  }

  const std::string& prefix() const { return prefix_; }
  SecondConv second_conv() const { return second_; }

private:
  std::string prefix_;
  std::size_t c_in_, c_out_, stride_;
  SecondConv second_;
  std::optional<PyramidConv> pyramid_;
};

/// x[B x 1 x T x H x W] -> F2[B x T x C1]. Time is folded into the batch
/// for the 2-D stages; every temporal stride is 1, so T is preserved.
class Frontend {
public:
  Frontend(FrontendConfig cfg, std::size_t height, std::size_t width, std::string prefix = "frontend")
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    cfg_.stage_extents(height, width);
    std::size_t c_in = cfg_.stage_widths.front();
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s)
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::size_t c_out = cfg_.stage_widths[s];
        blocks_.emplace_back(prefix_ + ".stage" + std::to_string(s) + ".block" + std::to_string(b), c_in, c_out,
                             b == 0 ? cfg_.stage_strides[s] : 1, cfg_.second_conv, cfg_.pyramid_kernels);
        c_in = c_out;
      }
  }

  void init(ParamStore& store, Rng& rng) const {
    const auto& k = cfg_.stem_kernel;
    store.add(prefix_ + ".stem.weight", kaiming({cfg_.stage_widths.front(), 1, k[0], k[1], k[2]}, k[0] * k[1] * k[2], rng));
    add_batchnorm(store, prefix_ + ".stem_bn", cfg_.stage_widths.front());
    for (const auto& b : blocks_) b.init(store, rng);
  }

  /// Stem only: [B x 1 x T x H x W] -> [B x C0 x T x H' x W'].
  Tensor stem(Context& ctx, const Tensor& x) const {
    Tensor h = conv3d(x, ctx.param(prefix_ + ".stem.weight"), std::nullopt, cfg_.stem_stride, cfg_.stem_pad);
    return relu(apply_batchnorm(ctx, prefix_ + ".stem_bn", h));
  }

  Tensor forward(Context& ctx, const Tensor& x) const {
    if (x.rank() != 5 || x.dim(1) != 1)
      throw ShapeError("frontend: expected [B x 1 x T x H x W], got " + pyrlip::to_string(x.shape()));
    const std::size_t batch = x.dim(0), frames = x.dim(2);
    Tensor h = stem(ctx, x);
    const std::size_t c = h.dim(1), hh = h.dim(3), ww = h.dim(4);
    h = reshape(permute(h, {0, 2, 1, 3, 4}), {batch * frames, c, hh, ww});
    for (const auto& b : blocks_) h = b.forward(ctx, h);
    const std::size_t c1 = h.dim(1);
    h = mean(reshape(h, {batch * frames, c1, h.dim(2) * h.dim(3)}), 2);
    return reshape(h, {batch, frames, c1});
  }

  const FrontendConfig& config() const { return cfg_; }
  const std::vector<BasicBlock>& blocks() const { return blocks_; }

private:
  FrontendConfig cfg_;
  std::string prefix_;
  std::vector<BasicBlock> blocks_;
};

} // namespace pyrlip::nn
