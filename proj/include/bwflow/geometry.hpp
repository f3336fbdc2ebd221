#pragma once

#include "bwflow/linalg.hpp"
#include "bwflow/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>

namespace bwflow {

/// Symmetric positive-(semi)definite matrix with a cached eigendecomposition.
/// Construction symmetrizes the input after checking the asymmetry is noise,
/// not a bug (residual above 1e-10 * scale rejects).
class SymmetricPD {
 public:
  explicit SymmetricPD(const Mat& a, bool require_pd = true) {
    if (a.rows() != a.cols()) throw config_error("SymmetricPD: matrix must be square");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * scale)
      throw numerical_error("SymmetricPD: symmetry residual " + std::to_string(asym));
    m_ = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(m_);
    if (es.info() != Eigen::Success)
      throw numerical_error("SymmetricPD: eigendecomposition failed");
    evals_ = es.eigenvalues();
    evecs_ = es.eigenvectors();
    if (require_pd && !(evals_.minCoeff() > 0.0))
      throw numerical_error("SymmetricPD: matrix not positive definite (eigmin " +
                            std::to_string(evals_.minCoeff()) + ")");
  }

  const Mat& matrix() const { return m_; }
  const Vec& eigenvalues() const { return evals_; }
  const Mat& eigenvectors() const { return evecs_; }
  Index dim() const { return m_.rows(); }

  Mat apply_spectral(const std::function<double(double)>& fn) const {
    Vec mapped(evals_.size());
    for (Index i = 0; i < evals_.size(); ++i) mapped[i] = fn(evals_[i]);
    Mat out = evecs_ * mapped.asDiagonal() * evecs_.transpose();
    return 0.5 * (out + out.transpose());
  }

 private:
  Mat m_;
  Vec evals_;
  Mat evecs_;
};

/// Symmetric PSD square root via eigendecomposition; eigenvalues in
/// [-1e-10*||A||, 0) are rounding and clip to zero, anything lower rejects.
inline SymmetricPD sqrtm_psd(const SymmetricPD& a) {
  const double floor = -1e-10 * std::max(1.0, a.eigenvalues().cwiseAbs().maxCoeff());
  if (a.eigenvalues().minCoeff() < floor)
    throw numerical_error("sqrtm_psd: eigenvalue below tolerance floor");
  Mat root = a.apply_spectral([](double lam) { return std::sqrt(std::max(lam, 0.0)); });
  return SymmetricPD(root, /*require_pd=*/false);
}

inline Mat inv_sqrtm_pd(const SymmetricPD& a) {
  if (!(a.eigenvalues().minCoeff() > 1e-14 * a.eigenvalues().maxCoeff()))
    throw numerical_error("inv_sqrtm_pd: near-singular matrix");
  return a.apply_spectral([](double lam) { return 1.0 / std::sqrt(lam); });
}

/// Squared Bures distance tr(A + B - 2 (A^{1/2} B A^{1/2})^{1/2}).
inline double bures_distance_sq(const SymmetricPD& a, const SymmetricPD& b) {
  if (a.dim() != b.dim()) throw config_error("bures_distance_sq: dimension mismatch");
  const Mat ar = sqrtm_psd(a).matrix();
  SymmetricPD inner(ar * b.matrix() * ar, /*require_pd=*/false);
  double cross = 0.0;
  for (Index i = 0; i < inner.dim(); ++i)
    cross += std::sqrt(std::max(inner.eigenvalues()[i], 0.0));
  double d2 = a.matrix().trace() + b.matrix().trace() - 2.0 * cross;
  if (d2 < 0.0) {
    if (d2 < -1e-10) throw numerical_error("bures_distance_sq: negative beyond rounding");
    d2 = 0.0;
  }
  return d2;
}

/// Closed-form Gaussian Wasserstein-2 distance.
inline double w2_gaussian(const RowVec& mean_q, const SymmetricPD& cov_q,
                          const RowVec& mean_p, const SymmetricPD& cov_p) {
  const double mean_term = (mean_q - mean_p).squaredNorm();
  return std::sqrt(mean_term + bures_distance_sq(cov_q, cov_p));
}

/// Differential of pi(S) = S S^T: always lands in the symmetric matrices.
inline Mat dpi(const Mat& s, const Mat& x) {
  if (s.rows() != x.rows() || s.cols() != x.cols() || s.rows() != s.cols())
    throw config_error("dpi: dimension mismatch");
  return x * s.transpose() + s * x.transpose();
}

struct TangentDecomposition {
  Mat horizontal;  // = H * S with H symmetric
  Mat vertical;    // kernel component: vertical S^T + S vertical^T = 0
  Mat h;           // the symmetric coefficient
};

/// Splits X in T_S into horizontal + vertical parts. The symmetric H solves
/// the Lyapunov equation H Sigma + Sigma H = X S^T + S X^T in the eigenbasis
/// of Sigma = S S^T, which is well-posed whenever S is nonsingular.
inline TangentDecomposition horizontal_projection(const Mat& s, const Mat& x) {
  if (s.rows() != s.cols() || x.rows() != s.rows() || x.cols() != s.cols())
    throw config_error("horizontal_projection: dimension mismatch");
  SymmetricPD sigma(s * s.transpose());
  const Mat c = dpi(s, x);
  const Mat c_tilde = sigma.eigenvectors().transpose() * c * sigma.eigenvectors();
  Mat h_tilde(c.rows(), c.cols());
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j)
      h_tilde(i, j) = c_tilde(i, j) / (sigma.eigenvalues()[i] + sigma.eigenvalues()[j]);
  TangentDecomposition out;
  out.h = sigma.eigenvectors() * h_tilde * sigma.eigenvectors().transpose();
  out.h = symmetrized(out.h);
  out.horizontal = out.h * s;
  out.vertical = x - out.horizontal;
  return out;
}

inline void require_horizontal(const Mat& s, const Mat& grad_s, const char* who) {
  const double vert = horizontal_projection(s, grad_s).vertical.norm();
  if (vert > 1e-6 * std::max(grad_s.norm(), 1e-300))
    throw numerical_error(std::string(who) + ": gradient has a vertical component (" +
                          std::to_string(vert) + ")");
}

/// Riemannian gradient on the covariance side under d pi_S(X) = X S^T + S X^T.
/// Requires a horizontal input (the submersion maps only horizontal vectors).
inline Mat riemannian_grad_Q(const Mat& s, const Mat& grad_s) {
  require_horizontal(s, grad_s, "riemannian_grad_Q");
  return dpi(s, grad_s);
}

/// Same gradient in the coordinate system d pi_S(X) = X S^{-1}.
inline Mat riemannian_grad_BW(const Mat& s, const Mat& grad_s) {
  require_horizontal(s, grad_s, "riemannian_grad_BW");
  return grad_s * s.inverse();
}

/// Optimal transport map from N(0, A) to N(0, B):
/// T = A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}.
inline Mat ot_map(const SymmetricPD& a, const SymmetricPD& b) {
  if (a.dim() != b.dim()) throw config_error("ot_map: dimension mismatch");
  const Mat ar = sqrtm_psd(a).matrix();
  const Mat ai = inv_sqrtm_pd(a);
  const Mat mid = sqrtm_psd(SymmetricPD(ar * b.matrix() * ar, false)).matrix();
  Mat t = ai * mid * ai;
  return 0.5 * (t + t.transpose());
}

/// Bures-Wasserstein geodesic Sigma_t = ((1-t)I + tT) A ((1-t)I + tT).
inline SymmetricPD geodesic(const SymmetricPD& a, const SymmetricPD& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw config_error("geodesic: t out of [0,1]");
  const Mat m = (1.0 - t) * Mat::Identity(a.dim(), a.dim()) + t * ot_map(a, b);
  return SymmetricPD(m * a.matrix() * m);
}

/// Horizontal lift of the geodesic in scale space: S_t = ((1-t)I + tT) A^{1/2}.
inline Mat horizontal_lift_geodesic(const SymmetricPD& a, const SymmetricPD& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw config_error("horizontal_lift_geodesic: t out of [0,1]");
  const Mat m = (1.0 - t) * Mat::Identity(a.dim(), a.dim()) + t * ot_map(a, b);
  return m * sqrtm_psd(a).matrix();
}

struct GaussianFit {
  RowVec mean;
  SymmetricPD cov;
  bool degenerate;
};

/// Sample mean and unbiased covariance of a particle cloud, regularized by
/// 1e-10 I so near-collapsed clouds stay usable (flagged degenerate instead
/// of erroring; particle clouds early in a Langevin run can be this way).
inline GaussianFit empirical_gaussian_fit(const Mat& positions) {
  const Index m = positions.rows();
  const Index n = positions.cols();
  if (m <= n)
    throw config_error("empirical_gaussian_fit: need more particles than dimensions");
  RowVec mean = positions.colwise().mean();
  Mat centered = positions.rowwise() - mean;
  Mat cov = (centered.transpose() * centered) / static_cast<double>(m - 1);
  cov += 1e-10 * Mat::Identity(n, n);
  SymmetricPD wrapped(cov, /*require_pd=*/false);
  const bool degenerate = wrapped.eigenvalues().minCoeff() <= 1e-9;
  return GaussianFit{std::move(mean), std::move(wrapped), degenerate};
}

}  // namespace bwflow
