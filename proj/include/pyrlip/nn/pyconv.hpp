#pragma once

#include <string>
#include <vector>

#include "pyrlip/core/conv.hpp"
#include "pyrlip/core/ops.hpp"
#include "pyrlip/nn/params.hpp"

namespace pyrlip::nn {

/// Multi-scale convolution: `levels` parallel kernels of increasing size,
/// each producing a slice of the output channels. With `hierarchical` set,
/// level k > 0 reads concat(x, Y_{k-1}) instead of x alone.
struct PyConvConfig {
  std::size_t levels = 4;
  std::vector<std::size_t> kernel_sizes{3, 5, 7, 9};
  std::vector<std::size_t> out_channels_per_level{};
  std::size_t stride = 1;
  bool hierarchical = false;

  /// Equal split of c_out over the kernel list.
  static PyConvConfig equal_split(std::size_t c_out, std::vector<std::size_t> kernels = {3, 5, 7, 9},
                                  std::size_t stride = 1, bool hierarchical = false) {
    PyConvConfig cfg;
    cfg.levels = kernels.size();
    cfg.kernel_sizes = std::move(kernels);
    cfg.stride = stride;
    cfg.hierarchical = hierarchical;
    if (cfg.levels == 0 || c_out % cfg.levels != 0)
      throw ConfigError("pyramid conv: " + std::to_string(c_out) + " output channels cannot be split equally over " +
                        std::to_string(cfg.levels) + " levels");
    cfg.out_channels_per_level.assign(cfg.levels, c_out / cfg.levels);
    return cfg;
  }

  std::size_t out_channels() const {
    std::size_t s = 0;
    for (auto c : out_channels_per_level) s += c;
    return s;
  }

  void validate() const {
    if (levels == 0) throw ConfigError("pyramid conv: need at least one level");
    if (kernel_sizes.size() != levels || out_channels_per_level.size() != levels)
      throw ConfigError("pyramid conv: kernel_sizes and out_channels_per_level must both have " +
                        std::to_string(levels) + " entries");
    for (auto k : kernel_sizes)
      if (k % 2 == 0) throw ConfigError("pyramid conv: kernel sizes must be odd, got " + std::to_string(k));
    for (auto c : out_channels_per_level)
      if (c == 0) throw ConfigError("pyramid conv: every level needs at least one output channel");
    if (stride == 0) throw ConfigError("pyramid conv: stride must be >= 1");
  }

  /// Input channels seen by level i.
  std::size_t level_in_channels(std::size_t c_in, std::size_t i) const {
    return c_in + (hierarchical && i > 0 ? out_channels_per_level[i - 1] : 0);
  }

  Shape weight_shape(std::size_t c_in, std::size_t i) const {
    return {out_channels_per_level[i], level_in_channels(c_in, i), kernel_sizes[i], kernel_sizes[i]};
  }
};

/// Hierarchical variant; identical fields, the flag selects the wiring.
using HPConvConfig = PyConvConfig;

namespace detail {

inline void check_level_weights(const PyConvConfig& cfg, std::size_t c_in, const std::vector<Tensor>& weights) {
  cfg.validate();
  if (weights.size() != cfg.levels)
    throw ConfigError("pyramid conv: expected " + std::to_string(cfg.levels) + " kernel tensors, got " +
                      std::to_string(weights.size()));
  for (std::size_t i = 0; i < cfg.levels; ++i)
    if (weights[i].shape() != cfg.weight_shape(c_in, i))
      throw ShapeError("pyramid conv: level " + std::to_string(i) + " kernel has shape " +
                       to_string(weights[i].shape()) + ", expected " + to_string(cfg.weight_shape(c_in, i)));
}

} // namespace detail

/// Every level convolves the original input; outputs are concatenated in
/// level order. The hierarchical flag is ignored.
inline Tensor pyconv_forward(const PyConvConfig& cfg, const Tensor& x, const std::vector<Tensor>& weights) {
  PyConvConfig flat = cfg;
  flat.hierarchical = false;
  detail::check_level_weights(flat, x.dim(1), weights);
  std::vector<Tensor> levels;
  for (std::size_t i = 0; i < cfg.levels; ++i)
    levels.push_back(conv2d(x, weights[i], std::nullopt, cfg.stride, (cfg.kernel_sizes[i] - 1) / 2));
  return cfg.levels == 1 ? levels.front() : concat_channels(levels);
}

/// Y_0 = conv(x, K_0); Y_k = conv(concat(x, Y_{k-1}), K_k); output is
/// concat(Y_0..Y_{n-1}). Falls back to pyconv_forward when not hierarchical.
///
/// With stride > 1 the chain runs at input resolution (so x and Y_{k-1}
/// line up for the concatenation) and each level output is subsampled
/// afterwards by a strided 1x1 identity conv, which yields the same grid as
/// a strided same-padded conv.
inline Tensor hpconv_forward(const HPConvConfig& cfg, const Tensor& x, const std::vector<Tensor>& weights) {
  if (!cfg.hierarchical) return pyconv_forward(cfg, x, weights);
  detail::check_level_weights(cfg, x.dim(1), weights);
  std::vector<Tensor> full, levels;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    const std::size_t pad = (cfg.kernel_sizes[i] - 1) / 2;
    const Tensor in = i == 0 ? x : concat_channels({x, full.back()});
    full.push_back(conv2d(in, weights[i], std::nullopt, 1, pad));
    if (cfg.stride == 1) {
      levels.push_back(full.back());
    } else {
      const std::size_t c = cfg.out_channels_per_level[i];
      std::vector<double> eye(c * c, 0.0);
      for (std::size_t j = 0; j < c; ++j) eye[j * c + j] = 1.0;
      levels.push_back(conv2d(full.back(), Tensor({c, c, 1, 1}, std::move(eye)), std::nullopt, cfg.stride, 0));
    }
  }
  return cfg.levels == 1 ? levels.front() : concat_channels(levels);
}

/// Parameter holder for a pyramid conv inside a model.
class PyramidConv {
public:
  PyramidConv(std::string prefix, std::size_t c_in, PyConvConfig cfg)
      : prefix_(std::move(prefix)), c_in_(c_in), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  void init(ParamStore& store, Rng& rng) const {
    for (std::size_t i = 0; i < cfg_.levels; ++i) {
      const Shape s = cfg_.weight_shape(c_in_, i);
      store.add(weight_name(i), kaiming(s, s[1] * s[2] * s[3], rng));
    }
  }

  Tensor forward(Context& ctx, const Tensor& x) const {
    std::vector<Tensor> w;
    for (std::size_t i = 0; i < cfg_.levels; ++i) w.push_back(ctx.param(weight_name(i)));
    return hpconv_forward(cfg_, x, w);
  }

  std::string weight_name(std::size_t i) const { return prefix_ + ".level" + std::to_string(i) + ".weight"; }
  const PyConvConfig& config() const { return cfg_; }

private:
  std::string prefix_;
  std::size_t c_in_;
  PyConvConfig cfg_;
};

} // namespace pyrlip::nn
