#pragma once

#include "bwflow/linalg.hpp"
#include "bwflow/types.hpp"

#include <cmath>

// Low-level Gaussian evaluation for N(mean, S S^T) given a factorization of
// the scale S. The variational family and GaussianTarget both evaluate
// through these kernels, so a target built from the same (mean, S) bits as a
// set of variational parameters produces bitwise-identical densities and
// scores. That is what makes "q = p" gradients vanish exactly, not just to
// rounding.

namespace bwflow {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

/// Rowwise log N(x; mean, S S^T).
inline Vec gaussian_log_density(const RowVec& mean, const ScaleFactor& factor, const Mat& x) {
  if (x.cols() != mean.cols()) throw config_error("gaussian_log_density: dimension mismatch");
  const Mat centered = x.rowwise() - mean;
  const Mat whitened = factor.whiten(centered);  // centered * S^{-T}
  const double log_det_sigma = 2.0 * factor.log_abs_det();
  const double constant = -0.5 * log_det_sigma - 0.5 * static_cast<double>(mean.cols()) * kLogTwoPi;
  Vec out(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    out[i] = -0.5 * whitened.row(i).squaredNorm() + constant;
  return out;
}

/// Rowwise score: -(x - mean) Sigma^{-1} = -((x - mean) S^{-T}) S^{-1}.
inline Mat gaussian_score(const RowVec& mean, const ScaleFactor& factor, const Mat& x) {
  if (x.cols() != mean.cols()) throw config_error("gaussian_score: dimension mismatch");
  const Mat centered = x.rowwise() - mean;
  return -factor.right_solve(factor.whiten(centered));
}

/// Constant-in-x Hessian of log N(.; mean, S S^T): -S^{-T} S^{-1} = -Sigma^{-1}.
inline Mat gaussian_log_density_hessian(const ScaleFactor& factor) {
  const Mat s_inv_t = factor.inverse_transposed();
  return -(s_inv_t * s_inv_t.transpose());
}

}  // namespace bwflow
