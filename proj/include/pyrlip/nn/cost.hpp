#pragma once

#include <cstdint>

#include "pyrlip/core/conv.hpp"
#include "pyrlip/nn/pyconv.hpp"

namespace pyrlip::nn {

// Closed-form parameter and multiply-add counts. Padding positions count as
// multiply-adds, matching how the convolution kernels execute.

inline std::uint64_t conv2d_params(std::size_t c_in, std::size_t c_out, std::size_t k) {
  return std::uint64_t{c_out} * c_in * k * k;
}

inline std::uint64_t conv2d_macs(std::size_t batch, std::size_t c_in, std::size_t c_out, std::size_t k,
                                 std::size_t h_out, std::size_t w_out) {
  return std::uint64_t{batch} * c_out * c_in * k * k * h_out * w_out;
}

/// sum_i C_out_i * C_in_i * K_i^2, with C_in_i enlarged by the hierarchical
/// concatenation.
inline std::uint64_t pyconv_params(const PyConvConfig& cfg, std::size_t c_in) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < cfg.levels; ++i)
    n += conv2d_params(cfg.level_in_channels(c_in, i), cfg.out_channels_per_level[i], cfg.kernel_sizes[i]);
  return n;
}

/// Multiply-adds of one pyramid conv forward pass on [batch x c_in x h x w].
inline std::uint64_t pyconv_macs(const PyConvConfig& cfg, std::size_t c_in, std::size_t batch, std::size_t h,
                                 std::size_t w) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    const std::size_t k = cfg.kernel_sizes[i], pad = (k - 1) / 2, c_out = cfg.out_channels_per_level[i];
    const std::size_t ho = conv_out_extent(h, k, cfg.stride, pad), wo = conv_out_extent(w, k, cfg.stride, pad);
    if (cfg.hierarchical && cfg.stride > 1) {
      // full-resolution chain, then the strided 1x1 subsampling
      n += conv2d_macs(batch, cfg.level_in_channels(c_in, i), c_out, k, h, w);
      n += conv2d_macs(batch, c_out, c_out, 1, ho, wo);
    } else {
      n += conv2d_macs(batch, cfg.level_in_channels(c_in, i), c_out, k, ho, wo);
    }
  }
  return n;
}

} // namespace pyrlip::nn
