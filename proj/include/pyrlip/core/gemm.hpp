#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace pyrlip::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

/// C[m x n] (+)= op(A) * op(B), all row-major. A is stored k x m when
/// trans_a, B is stored n x k when trans_b.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MatMap cm(c, M, N);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b)
    cm.noalias() += ConstMatMap(a, M, K) * ConstMatMap(b, K, N);
  else if (trans_a && !trans_b)
    cm.noalias() += ConstMatMap(a, K, M).transpose() * ConstMatMap(b, K, N);
  else if (!trans_a && trans_b)
    cm.noalias() += ConstMatMap(a, M, K) * ConstMatMap(b, N, K).transpose();
  else
    cm.noalias() += ConstMatMap(a, K, M).transpose() * ConstMatMap(b, N, K).transpose();
}

} // namespace pyrlip::detail
