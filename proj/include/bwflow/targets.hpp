#pragma once

#include "bwflow/gaussian_kernel.hpp"
#include "bwflow/linalg.hpp"
#include "bwflow/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bwflow {

/// Unnormalized log-density with analytic score. The true density is
/// exp(log_density_unnorm(x) - log_normalizer()) whenever the normalizer is
/// known. Evaluations are pure and safe to call concurrently.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual Index dim() const = 0;
  virtual double log_density_unnorm(const RowVec& x) const = 0;
  virtual RowVec score(const RowVec& x) const = 0;

  virtual bool has_hessian() const { return false; }
  /// True when the Hessian of log p does not depend on x, so expectations of
  /// it are exact (Gaussian targets).
  virtual bool hessian_is_constant() const { return false; }
  virtual Mat hessian(const RowVec&) const {
    throw config_error("target does not expose a Hessian");
  }

  virtual std::optional<double> log_normalizer() const { return std::nullopt; }

  /// Batch entry points; overridden where a vectorized path exists.
  virtual Vec log_density_unnorm_batch(const Mat& x) const {
    Vec out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) out[i] = log_density_unnorm(x.row(i));
    return out;
  }
  virtual Mat score_batch(const Mat& x) const {
    Mat out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) out.row(i) = score(x.row(i));
    return out;
  }
};

/// Normalized Gaussian target N(mean, cov). Internally evaluates through the
/// shared scale-factor kernel on chol(cov), so log_normalizer is exactly 0.
class GaussianTarget : public TargetDensity {
 public:
  GaussianTarget(RowVec mean, Mat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.cols())
      throw config_error("GaussianTarget: dimension mismatch");
    const double asym = (cov_ - cov_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(1.0, cov_.cwiseAbs().maxCoeff()))
      throw config_error("GaussianTarget: covariance not symmetric");
    cov_ = symmetrized(cov_);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov_);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw config_error("GaussianTarget: covariance not positive definite");
    Eigen::LLT<Mat> llt(cov_);
    if (llt.info() != Eigen::Success)
      throw numerical_error("GaussianTarget: Cholesky factorization failed");
    scale_ = llt.matrixL();
    factor_ = std::make_shared<ScaleFactor>(scale_);
    const Mat s_inv_t = factor_->inverse_transposed();
    precision_ = s_inv_t * s_inv_t.transpose();
  }

  Index dim() const override { return mean_.cols(); }
  const RowVec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  /// Lower-triangular scale with scale * scale^T = cov; building variational
  /// parameters from these exact bits reproduces this target's evaluations.
  const Mat& scale() const { return scale_; }
  const Mat& precision() const { return precision_; }

  double log_density_unnorm(const RowVec& x) const override {
    return gaussian_log_density(mean_, *factor_, x)[0];
  }
  RowVec score(const RowVec& x) const override {
    return gaussian_score(mean_, *factor_, x).row(0);
  }
  Vec log_density_unnorm_batch(const Mat& x) const override {
    return gaussian_log_density(mean_, *factor_, x);
  }
  Mat score_batch(const Mat& x) const override { return gaussian_score(mean_, *factor_, x); }

  bool has_hessian() const override { return true; }
  bool hessian_is_constant() const override { return true; }
  Mat hessian(const RowVec&) const override { return -precision_; }

  std::optional<double> log_normalizer() const override { return 0.0; }

 private:
  RowVec mean_;
  Mat cov_;
  Mat scale_;
  std::shared_ptr<ScaleFactor> factor_;
  Mat precision_;
};

/// Banana-shaped density log p(x) = -a (x1 - mu)^2 - b (x2 - x1^2)^2.
class RosenbrockTarget : public TargetDensity {
 public:
  RosenbrockTarget(double a, double b, double mu) : a_(a), b_(b), mu_(mu) {}

  Index dim() const override { return 2; }
  double log_density_unnorm(const RowVec& x) const override {
    const double d1 = x[0] - mu_;
    const double d2 = x[1] - x[0] * x[0];
    return -a_ * d1 * d1 - b_ * d2 * d2;
  }
  RowVec score(const RowVec& x) const override {
    const double d2 = x[1] - x[0] * x[0];
    RowVec g(2);
    g[0] = -2.0 * a_ * (x[0] - mu_) + 4.0 * b_ * x[0] * d2;
    g[1] = -2.0 * b_ * d2;
    return g;
  }
  bool has_hessian() const override { return true; }
  Mat hessian(const RowVec& x) const override {
    const double d2 = x[1] - x[0] * x[0];
    Mat h(2, 2);
    h(0, 0) = -2.0 * a_ + 4.0 * b_ * (d2 - 2.0 * x[0] * x[0]);
    h(0, 1) = 4.0 * b_ * x[0];
    h(1, 0) = h(0, 1);
    h(1, 1) = -2.0 * b_;
    return h;
  }

 private:
  double a_, b_, mu_;
};

/// Finite mixture of Gaussian components, evaluated with a max-shifted
/// log-sum-exp. Weights summing to one keep the density normalized.
class MixtureTarget : public TargetDensity {
 public:
  MixtureTarget(Vec weights, std::vector<GaussianTarget> components)
      : weights_(std::move(weights)), components_(std::move(components)) {
    if (components_.empty() || weights_.size() != static_cast<Index>(components_.size()))
      throw config_error("MixtureTarget: weights/components mismatch");
    if (weights_.minCoeff() < 0.0 || std::abs(weights_.sum() - 1.0) > 1e-12)
      throw config_error("MixtureTarget: weights must be a simplex vector");
    for (const auto& c : components_)
      if (c.dim() != components_.front().dim())
        throw config_error("MixtureTarget: component dimensions differ");
    log_weights_ = weights_.array().log();
  }

  Index dim() const override { return components_.front().dim(); }
  Index num_components() const { return static_cast<Index>(components_.size()); }
  const Vec& weights() const { return weights_; }
  const std::vector<GaussianTarget>& components() const { return components_; }

  double log_density_unnorm(const RowVec& x) const override {
    return log_sum_exp(component_log_terms(x));
  }

  RowVec score(const RowVec& x) const override {
    const Vec terms = component_log_terms(x);
    const double lse = log_sum_exp(terms);
    RowVec out = RowVec::Zero(dim());
    for (Index k = 0; k < num_components(); ++k)
      out += std::exp(terms[k] - lse) * components_[k].score(x);
    return out;
  }

  bool has_hessian() const override { return true; }
  Mat hessian(const RowVec& x) const override {
    // H = sum_k resp_k (H_k + s_k^T s_k) - s^T s  with s the mixture score.
    const Vec terms = component_log_terms(x);
    const double lse = log_sum_exp(terms);
    Mat h = Mat::Zero(dim(), dim());
    RowVec s = RowVec::Zero(dim());
    for (Index k = 0; k < num_components(); ++k) {
      const double resp = std::exp(terms[k] - lse);
      const RowVec sk = components_[k].score(x);
      h += resp * (components_[k].hessian(x) + sk.transpose() * sk);
      s += resp * sk;
    }
    h -= s.transpose() * s;
    return h;
  }

  std::optional<double> log_normalizer() const override { return 0.0; }

 private:
  Vec component_log_terms(const RowVec& x) const {
    Vec terms(num_components());
    for (Index k = 0; k < num_components(); ++k)
      terms[k] = log_weights_[k] + components_[k].log_density_unnorm(x.row(0));
    return terms;
  }

  Vec weights_;
  std::vector<GaussianTarget> components_;
  Vec log_weights_;
};

/// Stable log-sum-exp mixture density, exposed under its interface name.
inline double mixture_target_logsumexp(const MixtureTarget& target, const RowVec& x) {
  return target.log_density_unnorm(x);
}

namespace detail {
// log sigma(t) = -softplus(-t), never exponentiates a large positive value.
inline double log_sigmoid(double t) {
  return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}
inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}
}  // namespace detail

/// Bayesian logistic regression posterior over w = (weights, bias):
/// log p(w) = -|w|^2 / (2 prior_variance) + sum_i log sigma(y_i z_i),
/// z_i = x_i . w_feat + bias, labels in {-1, +1}.
class LogisticPosterior : public TargetDensity {
 public:
  LogisticPosterior(Mat features, Vec labels, double prior_variance)
      : features_(std::move(features)), labels_(std::move(labels)),
        prior_variance_(prior_variance) {
    if (features_.rows() != labels_.size())
      throw config_error("LogisticPosterior: feature/label count mismatch");
    if (!(prior_variance_ > 0.0))
      throw config_error("LogisticPosterior: prior variance must be positive");
    for (Index i = 0; i < labels_.size(); ++i)
      if (labels_[i] != 1.0 && labels_[i] != -1.0)
        throw config_error("LogisticPosterior: labels must be -1 or +1");
  }

  Index dim() const override { return features_.cols() + 1; }
  Index num_rows() const { return features_.rows(); }
  const Mat& features() const { return features_; }
  const Vec& labels() const { return labels_; }

  double log_density_unnorm(const RowVec& w) const override {
    return log_density_unnorm_batch(w)[0];
  }
  RowVec score(const RowVec& w) const override { return score_batch(w).row(0); }

  Vec log_density_unnorm_batch(const Mat& w) const override {
    check_dim(w);
    const Mat z = margins(w);  // M x N, entry (m, i) = y_i * z_i under sample m
    Vec out(w.rows());
    for (Index m = 0; m < w.rows(); ++m) {
      double ll = 0.0;
      for (Index i = 0; i < z.cols(); ++i) ll += detail::log_sigmoid(z(m, i));
      out[m] = ll - 0.5 * w.row(m).squaredNorm() / prior_variance_;
    }
    return out;
  }

  Mat score_batch(const Mat& w) const override {
    check_dim(w);
    const Mat z = margins(w);
    // d/dz log sigma(y z) contributes sigma(-y_i z_i) * y_i per data row.
    Mat coeff(w.rows(), z.cols());
    for (Index m = 0; m < w.rows(); ++m)
      for (Index i = 0; i < z.cols(); ++i)
        coeff(m, i) = detail::sigmoid(-z(m, i)) * labels_[i];
    Mat grad(w.rows(), dim());
    grad.leftCols(features_.cols()) = coeff * features_;
    grad.col(dim() - 1) = coeff.rowwise().sum();
    grad -= w / prior_variance_;
    return grad;
  }

  bool has_hessian() const override { return true; }
  Mat hessian(const RowVec& w) const override {
    check_dim(w);
    const Index d = features_.cols();
    const Vec z = (features_ * w.leftCols(d).transpose()).array() + w[d];
    Mat h = -Mat::Identity(dim(), dim()) / prior_variance_;
    for (Index i = 0; i < features_.rows(); ++i) {
      const double s = detail::sigmoid(z[i]);
      const double c = s * (1.0 - s);
      RowVec xt(dim());
      xt.leftCols(d) = features_.row(i);
      xt[d] = 1.0;
      h -= c * xt.transpose() * xt;
    }
    return h;
  }

 private:
  void check_dim(const Mat& w) const {
    if (w.cols() != dim()) throw config_error("LogisticPosterior: dimension mismatch");
  }
  Mat margins(const Mat& w) const {
    const Index d = features_.cols();
    Mat z = w.leftCols(d) * features_.transpose();  // M x N
    z.colwise() += w.col(d);
    return z * labels_.asDiagonal();  // column i scaled by y_i
  }

  Mat features_;
  Vec labels_;
  double prior_variance_;
};

/// Wraps a target with log p + log_c; scores are untouched. Used by the
/// normalizer-scaling diagnostics.
class ScaledTarget : public TargetDensity {
 public:
  ScaledTarget(const TargetDensity& base, double log_c) : base_(base), log_c_(log_c) {}

  Index dim() const override { return base_.dim(); }
  double log_density_unnorm(const RowVec& x) const override {
    return base_.log_density_unnorm(x) + log_c_;
  }
  RowVec score(const RowVec& x) const override { return base_.score(x); }
  Vec log_density_unnorm_batch(const Mat& x) const override {
    return base_.log_density_unnorm_batch(x).array() + log_c_;
  }
  Mat score_batch(const Mat& x) const override { return base_.score_batch(x); }
  bool has_hessian() const override { return base_.has_hessian(); }
  bool hessian_is_constant() const override { return base_.hessian_is_constant(); }
  Mat hessian(const RowVec& x) const override { return base_.hessian(x); }

 private:
  const TargetDensity& base_;
  double log_c_;
};

/// Max relative error between the analytic score and a central finite
/// difference of the log-density, coordinate by coordinate.
inline double score_finite_diff_check(const TargetDensity& target, const RowVec& x, double h) {
  if (!(h > 0.0)) throw config_error("score_finite_diff_check: h must be positive");
  if (!x.allFinite()) throw config_error("score_finite_diff_check: x must be finite");
  const RowVec analytic = target.score(x);
  double worst = 0.0;
  for (Index i = 0; i < x.cols(); ++i) {
    RowVec hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    const double up = target.log_density_unnorm(hi);
    const double dn = target.log_density_unnorm(lo);
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw numerical_error("score_finite_diff_check: non-finite log density at coordinate " +
                            std::to_string(i));
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (1.0 + std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace bwflow
