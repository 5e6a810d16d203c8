#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "pyrlip/core/tape.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip {

enum class NormMode { train, eval };

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over axis 1 of x[N x C x ...].
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into the running estimates (unbiased variance), which is why
/// the per-channel population must be at least 2. Eval mode reads the
/// running estimates and leaves them untouched.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                        Tensor& running_var, NormMode mode, BatchNormOptions opt = {}) {
  if (x.rank() < 2) throw ShapeError("batchnorm: expected [N x C x ...], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  for (const Tensor* p : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
    if (p->rank() != 1 || p->dim(0) != c)
      throw ShapeError("batchnorm: per-channel tensor " + to_string(p->shape()) + " does not match " +
                       std::to_string(c) + " channels");
  const std::size_t pop = n * inner;
  const bool train = mode == NormMode::train;
  if (train && pop < 2)
    throw ShapeError("batchnorm: train mode needs a per-channel population >= 2, got " + std::to_string(pop));

  std::vector<double> mean(c), invstd(c);
  if (train) {
    std::vector<double> var(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data().data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mean[ch] = s / static_cast<double>(pop);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data().data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - mean[ch]) * (p[i] - mean[ch]);
      }
      var[ch] = ss / static_cast<double>(pop);
      invstd[ch] = 1.0 / std::sqrt(var[ch] + opt.eps);
    }
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const double unbias = static_cast<double>(pop) / static_cast<double>(pop - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - opt.momentum) * rm[ch] + opt.momentum * mean[ch];
      rv[ch] = (1.0 - opt.momentum) * rv[ch] + opt.momentum * var[ch] * unbias;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(running_var[ch] + opt.eps);
    }
  }

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (x[base + i] - mean[ch]) * invstd[ch];
        (*xhat)[base + i] = h;
        out[base + i] = gamma[ch] * h + beta[ch];
      }
    }

  return detail::finish("batchnorm", Tensor(x.shape(), std::move(out)), {&x, &gamma, &beta}, [&] {
    return [xhat, invstd, gv = gamma.storage(), n, c, inner, pop, train](std::span<const double> g,
                                                                          const GradSink& sink) {
      auto dx = sink.buffer(0);
      auto dgamma = sink.buffer(1);
      auto dbeta = sink.buffer(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sg = 0.0, sgh = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = (b * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            sg += g[base + i];
            sgh += g[base + i] * (*xhat)[base + i];
          }
        }
        if (!dgamma.empty()) dgamma[ch] += sgh;
        if (!dbeta.empty()) dbeta[ch] += sg;
        if (dx.empty()) continue;
        const double gam = (*gv)[ch];
        if (train) {
          const double k = gam * invstd[ch] / static_cast<double>(pop);
          const double m = static_cast<double>(pop);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i)
              dx[base + i] += k * (m * g[base + i] - sg - (*xhat)[base + i] * sgh);
          }
        } else {
          const double k = gam * invstd[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) dx[base + i] += k * g[base + i];
          }
        }
      }
    };
  });
}

} // namespace pyrlip
