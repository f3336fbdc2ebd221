#pragma once

#include "bwflow/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace bwflow {

/// LU factorization of a (general, nonsingular) scale matrix S with the solve
/// patterns the Gaussian kernels need. Shared by the variational family and
/// GaussianTarget so that matched parameters evaluate through identical
/// arithmetic.
class ScaleFactor {
 public:
  explicit ScaleFactor(const Mat& s) : n_(s.rows()), lu_(s) {
    if (s.rows() != s.cols()) throw config_error("scale matrix must be square");
    const double scale_norm = s.cwiseAbs().maxCoeff();
    double log_abs_det = 0.0;
    double min_pivot = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n_; ++i) {
      const double pivot = std::abs(lu_.matrixLU()(i, i));
      min_pivot = std::min(min_pivot, pivot);
      log_abs_det += std::log(pivot);
    }
    if (!(min_pivot > 1e-12 * scale_norm)) {
      throw numerical_error("scale factorization: near-singular matrix (|pivot| " +
                            std::to_string(min_pivot) + " < 1e-12*||S||)");
    }
    log_abs_det_ = log_abs_det;
    condition_estimate_ = scale_norm / min_pivot;
  }

  Index dim() const { return n_; }
  double log_abs_det() const { return log_abs_det_; }
  double condition_estimate() const { return condition_estimate_; }

  /// Solves W S^T = Y for W, i.e. W = Y S^{-T}. Rows of Y are row vectors.
  Mat right_solve_transposed(const Mat& y) const {
    // W S^T = Y  <=>  S W^T = Y^T
    const Mat rhs = y.transpose();
    const Mat sol = lu_.solve(rhs);
    return sol.transpose();
  }

  /// Solves W S = Y for W, i.e. W = Y S^{-1}.
  Mat right_solve(const Mat& y) const {
    // W S = Y  <=>  S^T W^T = Y^T
    const Mat rhs = y.transpose();
    const Mat sol = lu_.transpose().solve(rhs);
    return sol.transpose();
  }

  /// Rowwise quadratic form (x Sigma^{-1} x^T) and score (-x Sigma^{-1}) pieces
  /// share the intermediate w = x S^{-T}: quadform = |w|^2, x Sigma^{-1} = w S^{-1}.
  Mat whiten(const Mat& centered) const { return right_solve_transposed(centered); }

  /// S^{-T} as a dense matrix (for gradient assembly terms).
  Mat inverse_transposed() const {
    return lu_.solve(Mat::Identity(n_, n_)).transpose();
  }

 private:
  Index n_;
  Eigen::PartialPivLU<Mat> lu_;
  double log_abs_det_ = 0.0;
  double condition_estimate_ = 0.0;
};

/// Alias-safe (A + A^T)/2: evaluates into a fresh matrix, so the argument may
/// be the destination of the assignment.
inline Mat symmetrized(const Mat& a) {
  Mat out = a.transpose();
  out += a;
  return 0.5 * out;
}

inline double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  return m + std::log((v.array() - m).exp().sum());
}

/// log(mean exp(v)) without overflow.
inline double log_mean_exp(const Vec& v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

}  // namespace bwflow
