#pragma once

#include "bwflow/divergences.hpp"
#include "bwflow/families.hpp"
#include "bwflow/rng.hpp"
#include "bwflow/targets.hpp"
#include "bwflow/types.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace bwflow {

/// Gradient mirroring the parameter structure, with Monte Carlo metadata.
/// For mixtures, `components` holds one entry per component and `d_logits`
/// the weight gradient. Every producing operation guarantees finiteness.
struct GradEstimate {
  RowVec d_mean;
  Mat d_scale;
  RowVec d_log_std;
  Vec d_logits;
  std::vector<GradEstimate> components;

  Index sample_count = 0;
  std::uint64_t seed = 0;
  double shift = 0.0;  // log-ratio shift applied by the producing estimator
  bool per_sample_available = false;
  /// Per-sample vector-field values g_i (N x n) when retained.
  Mat per_sample_field;

  void require_finite_fields(const char* who) const {
    if (d_mean.size() && !d_mean.allFinite()) throw numerical_error(std::string(who) + ": non-finite d_mean");
    if (d_scale.size() && !d_scale.allFinite()) throw numerical_error(std::string(who) + ": non-finite d_scale");
    if (d_log_std.size() && !d_log_std.allFinite()) throw numerical_error(std::string(who) + ": non-finite d_log_std");
    if (d_logits.size() && !d_logits.allFinite()) throw numerical_error(std::string(who) + ": non-finite d_logits");
    for (const auto& c : components) c.require_finite_fields(who);
  }
};

/// Density ratio with the stop-gradient operator applied: the snapshot taken
/// at construction is treated strictly as a constant, so nothing evaluated
/// through this object carries a theta-derivative.
class StopGradientRatio {
 public:
  StopGradientRatio(const TargetDensity& target, GaussianParams frozen)
      : target_(target), frozen_(std::move(frozen)) {
    const auto& p = std::get<GaussianParams>(frozen_);
    factors_.emplace_back(p.scale);
  }
  StopGradientRatio(const TargetDensity& target, DiagGaussianParams frozen)
      : target_(target), frozen_(std::move(frozen)) {}
  StopGradientRatio(const TargetDensity& target, MixtureParams frozen)
      : target_(target), frozen_(std::move(frozen)) {
    for (const auto& c : std::get<MixtureParams>(frozen_).components)
      factors_.emplace_back(c.scale);
  }

  /// log r(x) = log p(x) - log q(x; theta_frozen), rowwise.
  Vec log_r_batch(const Mat& x) const {
    return target_.log_density_unnorm_batch(x) - log_q_batch(x);
  }

  /// grad_x log r(x) = score_p(x) - score_q(x; theta_frozen), rowwise.
  Mat grad_x_log_r_batch(const Mat& x) const {
    return target_.score_batch(x) - score_q_batch(x);
  }

  Vec log_q_batch(const Mat& x) const {
    if (const auto* g = std::get_if<GaussianParams>(&frozen_))
      return log_density_batch(*g, factors_[0], x);
    if (const auto* d = std::get_if<DiagGaussianParams>(&frozen_))
      return log_density_batch(*d, x);
    const auto& m = std::get<MixtureParams>(frozen_);
    Vec out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) out[i] = mixture_log_density(m, factors_, x.row(i));
    return out;
  }

  Mat score_q_batch(const Mat& x) const {
    if (const auto* g = std::get_if<GaussianParams>(&frozen_))
      return bwflow::score_q_batch(*g, factors_[0], x);
    if (const auto* d = std::get_if<DiagGaussianParams>(&frozen_))
      return bwflow::score_q_batch(*d, x);
    const auto& m = std::get<MixtureParams>(frozen_);
    Mat out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) out.row(i) = mixture_score(m, factors_, x.row(i));
    return out;
  }

 private:
  const TargetDensity& target_;
  std::variant<GaussianParams, DiagGaussianParams, MixtureParams> frozen_;
  std::vector<ScaleFactor> factors_;
};

/// Max-shift of log ratios: returns exp(log_r - max log_r) and the shift, so
/// the largest ratio is exactly one.
inline std::pair<Vec, double> ratio_shift(const Vec& log_r) {
  if (log_r.size() == 0) throw config_error("ratio_shift: empty input");
  if (!log_r.allFinite()) throw numerical_error("ratio_shift: non-finite log ratio");
  const double shift = log_r.maxCoeff();
  return {(log_r.array() - shift).exp(), shift};
}

struct EstimatorOptions {
  bool use_ratio_shift = true;
  bool keep_per_sample = false;
};

namespace detail {

inline double shifted_weight(const FDivergence& div, double log_r, double shift,
                             bool unshifted_mode) {
  const double w = div.h_prime_times_r_from_log(log_r - shift);
  if (!std::isfinite(w)) {
    if (unshifted_mode)
      throw numerical_error("path gradient: ratio weight overflow at log r = " +
                            std::to_string(log_r) + "; enable the ratio shift");
    throw numerical_error("path gradient: non-finite ratio weight");
  }
  return w;
}

}  // namespace detail

/// Path-derivative (stop-gradient) estimator of grad_theta D_f(p || q_theta)
/// for the full-scale Gaussian family. Per sample,
///   g = -h'(r) r (score_p(x) - score_q(x; theta_s)),
/// contracted through the reparameterization Jacobian:
///   d_mean += g,  d_scale += g^T z.
/// Ratios never materialize outside log space; with the shift enabled the
/// batch maximum of log r is subtracted first (alpha-family magnitudes then
/// rescale by exp(-alpha shift), which the learning rate absorbs).
inline GradEstimate path_gradient(const GaussianParams& params, const TargetDensity& target,
                                  const FDivergence& div, const NoiseBatch& noise,
                                  const EstimatorOptions& opts = {}) {
  const Index n = params.dim();
  const Index num = noise.rows();
  const Mat x = reparameterize(params, noise);
  StopGradientRatio ratio(target, params);
  const Vec log_r = ratio.log_r_batch(x);
  if (!log_r.allFinite()) throw numerical_error("path gradient: non-finite log ratio");
  const Mat grad_log_r = ratio.grad_x_log_r_batch(x);
  const double shift = opts.use_ratio_shift ? log_r.maxCoeff() : 0.0;

  GradEstimate est;
  est.d_mean = RowVec::Zero(n);
  est.d_scale = Mat::Zero(n, n);
  est.sample_count = num;
  est.seed = noise.seed();
  est.shift = shift;
  if (opts.keep_per_sample) {
    est.per_sample_available = true;
    est.per_sample_field.resize(num, n);
  }
  for (Index i = 0; i < num; ++i) {
    const double w = detail::shifted_weight(div, log_r[i], shift, !opts.use_ratio_shift);
    const RowVec g = -(w * grad_log_r.row(i));
    est.d_mean += g;
    est.d_scale.noalias() += g.transpose() * noise.z().row(i);
    if (opts.keep_per_sample) est.per_sample_field.row(i) = g;
  }
  est.d_mean /= static_cast<double>(num);
  est.d_scale /= static_cast<double>(num);
  est.require_finite_fields("path_gradient");
  return est;
}

/// Diagonal-family variant: d_log_std += g .* (x - mean).
inline GradEstimate path_gradient(const DiagGaussianParams& params, const TargetDensity& target,
                                  const FDivergence& div, const NoiseBatch& noise,
                                  const EstimatorOptions& opts = {}) {
  const Index n = params.dim();
  const Index num = noise.rows();
  const Mat x = reparameterize(params, noise);
  StopGradientRatio ratio(target, params);
  const Vec log_r = ratio.log_r_batch(x);
  if (!log_r.allFinite()) throw numerical_error("path gradient: non-finite log ratio");
  const Mat grad_log_r = ratio.grad_x_log_r_batch(x);
  const double shift = opts.use_ratio_shift ? log_r.maxCoeff() : 0.0;

  GradEstimate est;
  est.d_mean = RowVec::Zero(n);
  est.d_log_std = RowVec::Zero(n);
  est.sample_count = num;
  est.seed = noise.seed();
  est.shift = shift;
  if (opts.keep_per_sample) {
    est.per_sample_available = true;
    est.per_sample_field.resize(num, n);
  }
  for (Index i = 0; i < num; ++i) {
    const double w = detail::shifted_weight(div, log_r[i], shift, !opts.use_ratio_shift);
    const RowVec g = -(w * grad_log_r.row(i));
    est.d_mean += g;
    est.d_log_std += g.cwiseProduct(x.row(i) - params.mean);
    if (opts.keep_per_sample) est.per_sample_field.row(i) = g;
  }
  est.d_mean /= static_cast<double>(num);
  est.d_log_std /= static_cast<double>(num);
  est.require_finite_fields("path_gradient");
  return est;
}

/// Monte Carlo mean of the explicit-parameter score term
/// grad_theta log q(x; theta) |_{x fixed at the reparameterized samples};
/// zero-mean in expectation. Shared building block of the KL estimators.
inline GradEstimate score_term_gradient(const GaussianParams& params, const NoiseBatch& noise) {
  const Index n = params.dim();
  const Index num = noise.rows();
  const ScaleFactor factor(params.scale);
  const Mat x = reparameterize(params, noise);
  const Mat score_q = score_q_batch(params, factor, x);
  const Mat s_inv_t = factor.inverse_transposed();

  GradEstimate est;
  est.d_mean = RowVec::Zero(n);
  est.d_scale = Mat::Zero(n, n);
  est.sample_count = num;
  est.seed = noise.seed();
  for (Index i = 0; i < num; ++i) {
    est.d_mean -= score_q.row(i);  // grad_mu log q = (x - mu) Sigma^{-1}
    const RowVec z = noise.z().row(i);
    est.d_scale.noalias() += s_inv_t * (z.transpose() * z - Mat::Identity(n, n));
  }
  est.d_mean /= static_cast<double>(num);
  est.d_scale /= static_cast<double>(num);
  est.require_finite_fields("score_term_gradient");
  return est;
}

inline GradEstimate score_term_gradient(const DiagGaussianParams& params,
                                        const NoiseBatch& noise) {
  const Index n = params.dim();
  const Index num = noise.rows();
  const Mat x = reparameterize(params, noise);
  const Mat score_q = score_q_batch(params, x);
  const RowVec inv_std = (-params.log_std).array().exp();

  GradEstimate est;
  est.d_mean = RowVec::Zero(n);
  est.d_log_std = RowVec::Zero(n);
  est.sample_count = num;
  est.seed = noise.seed();
  for (Index i = 0; i < num; ++i) {
    est.d_mean -= score_q.row(i);
    const RowVec w = (x.row(i) - params.mean).cwiseProduct(inv_std);
    est.d_log_std += w.cwiseProduct(w) - RowVec::Ones(n);
  }
  est.d_mean /= static_cast<double>(num);
  est.d_log_std /= static_cast<double>(num);
  est.require_finite_fields("score_term_gradient");
  return est;
}

namespace detail {

template <typename Params>
GradEstimate reparam_gradient_kl_impl(const Params& params, const TargetDensity& target,
                                      const NoiseBatch& noise, const EstimatorOptions& opts) {
  // Both chain-rule terms contribute: the path term (identical per-sample
  // pieces as the reverse-KL path gradient) plus the explicit score term.
  const Mat x = reparameterize(params, noise);
  const Vec log_p = target.log_density_unnorm_batch(x);
  for (Index i = 0; i < log_p.size(); ++i)
    if (!std::isfinite(log_p[i]))
      throw numerical_error("reparam_gradient_kl: non-finite log p at sample " +
                            std::to_string(i));
  const FDivergence rkl = make_divergence(DivergenceKind::ReverseKL);
  GradEstimate path = path_gradient(params, target, rkl, noise, opts);
  const GradEstimate score = score_term_gradient(params, noise);
  path.d_mean += score.d_mean;
  if (path.d_scale.size()) path.d_scale += score.d_scale;
  if (path.d_log_std.size()) path.d_log_std += score.d_log_std;
  path.require_finite_fields("reparam_gradient_kl");
  return path;
}

}  // namespace detail

/// Reparameterization-gradient estimator of grad_theta KL(q_theta || p)
/// (Monte Carlo mean of grad_theta [log q(x_theta; theta) - log p(x_theta)]).
inline GradEstimate reparam_gradient_kl(const GaussianParams& params,
                                        const TargetDensity& target, const NoiseBatch& noise,
                                        const EstimatorOptions& opts = {}) {
  return detail::reparam_gradient_kl_impl(params, target, noise, opts);
}
inline GradEstimate reparam_gradient_kl(const DiagGaussianParams& params,
                                        const TargetDensity& target, const NoiseBatch& noise,
                                        const EstimatorOptions& opts = {}) {
  return detail::reparam_gradient_kl_impl(params, target, noise, opts);
}

/// Closed-form Gaussian KL path gradient:
///   grad_mu  KL = -E[grad_x log(p/q)]
///   grad_S   KL = -E[(grad_x log(p/q))^T (x - mu) S^{-T}]
/// evaluated by Monte Carlo. The factor (x - mu) S^{-T} reconstructs z
/// exactly, so the contraction uses z; per-sample arithmetic then coincides
/// bit for bit with the generic reverse-KL path gradient on shared noise.
inline GradEstimate gaussian_closed_form_path_gradient(const GaussianParams& params,
                                                       const TargetDensity& target,
                                                       const NoiseBatch& noise,
                                                       const EstimatorOptions& opts = {}) {
  const Index n = params.dim();
  const Index num = noise.rows();
  const ScaleFactor factor(params.scale);
  const Mat x = reparameterize(params, noise);
  const Mat diff = target.score_batch(x) - score_q_batch(params, factor, x);

  GradEstimate est;
  est.d_mean = RowVec::Zero(n);
  est.d_scale = Mat::Zero(n, n);
  est.sample_count = num;
  est.seed = noise.seed();
  if (opts.keep_per_sample) {
    est.per_sample_available = true;
    est.per_sample_field.resize(num, n);
  }
  for (Index i = 0; i < num; ++i) {
    const RowVec g = -(1.0 * diff.row(i));
    est.d_mean += g;
    est.d_scale.noalias() += g.transpose() * noise.z().row(i);
    if (opts.keep_per_sample) est.per_sample_field.row(i) = g;
  }
  est.d_mean /= static_cast<double>(num);
  est.d_scale /= static_cast<double>(num);
  est.require_finite_fields("gaussian_closed_form_path_gradient");
  return est;
}

/// Hessian-form scale gradient grad_S KL = -E[hessian log p] S - S^{-T}.
/// Exact (no Monte Carlo) when the target Hessian is constant; otherwise the
/// expectation is estimated with the supplied noise.
inline Mat hessian_form_scale_gradient(const GaussianParams& params, const TargetDensity& target,
                                       const NoiseBatch* noise = nullptr) {
  if (!target.has_hessian())
    throw config_error("hessian_form_scale_gradient: target lacks Hessian capability");
  const Index n = params.dim();
  Mat expected_hessian;
  if (target.hessian_is_constant()) {
    expected_hessian = target.hessian(params.mean);
  } else {
    if (noise == nullptr)
      throw config_error("hessian_form_scale_gradient: non-constant Hessian needs a noise batch");
    const Mat x = reparameterize(params, *noise);
    expected_hessian = Mat::Zero(n, n);
    for (Index i = 0; i < x.rows(); ++i) expected_hessian += target.hessian(x.row(i));
    expected_hessian /= static_cast<double>(x.rows());
  }
  const ScaleFactor factor(params.scale);
  Mat grad = -expected_hessian * params.scale - factor.inverse_transposed();
  require_finite(grad, "hessian_form_scale_gradient");
  return grad;
}

/// Stratified mixture estimator: per component k, N fresh samples from q_k
/// feed the surrogate L(theta, m) = -sum_k m_k mean_i h(r_ik) with the full
/// mixture density (all parameters frozen) inside the ratio. One global
/// max-shift per call keeps the logit gradient's softmax geometry intact --
/// per-component shifts would tilt the weight gradient, not just rescale it.
inline GradEstimate gmm_surrogate_gradient(const MixtureParams& params,
                                           const TargetDensity& target, const FDivergence& div,
                                           const std::vector<NoiseBatch>& noise_per_component,
                                           const EstimatorOptions& opts = {}) {
  const Index k_count = params.num_components();
  if (static_cast<Index>(noise_per_component.size()) != k_count)
    throw config_error("gmm_surrogate_gradient: need one noise batch per component");
  const Index n = params.dim();
  StopGradientRatio ratio(target, params);
  const Vec weights = params.weights();

  std::vector<Mat> x(k_count), grad_log_r(k_count);
  std::vector<Vec> log_r(k_count);
  double shift = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < k_count; ++k) {
    x[k] = mixture_component_sample(params, k, noise_per_component[k]);
    log_r[k] = ratio.log_r_batch(x[k]);
    if (!log_r[k].allFinite())
      throw numerical_error("gmm_surrogate_gradient: non-finite log ratio in component " +
                            std::to_string(k));
    grad_log_r[k] = ratio.grad_x_log_r_batch(x[k]);
    shift = std::max(shift, log_r[k].maxCoeff());
  }
  if (!opts.use_ratio_shift) shift = 0.0;

  GradEstimate est;
  est.d_logits = Vec::Zero(k_count);
  est.sample_count = 0;
  est.seed = noise_per_component.front().seed();
  est.shift = shift;
  est.components.resize(k_count);
  Vec ell(k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Index num = noise_per_component[k].rows();
    est.sample_count += num;
    GradEstimate& comp = est.components[k];
    comp.d_mean = RowVec::Zero(n);
    comp.d_scale = Mat::Zero(n, n);
    comp.sample_count = num;
    comp.seed = noise_per_component[k].seed();
    if (opts.keep_per_sample) {
      comp.per_sample_available = true;
      comp.per_sample_field.resize(num, n);
    }
    double h_sum = 0.0;
    for (Index i = 0; i < num; ++i) {
      const double lr = log_r[k][i] - shift;
      h_sum += div.h_from_log(lr);
      const double w = detail::shifted_weight(div, log_r[k][i], shift, !opts.use_ratio_shift);
      const RowVec g = -(weights[k] * w) * grad_log_r[k].row(i);
      comp.d_mean += g;
      comp.d_scale.noalias() += g.transpose() * noise_per_component[k].z().row(i);
      if (opts.keep_per_sample) comp.per_sample_field.row(i) = g;
    }
    comp.d_mean /= static_cast<double>(num);
    comp.d_scale /= static_cast<double>(num);
    ell[k] = h_sum / static_cast<double>(num);
  }
  // dL/dm_k = -ell_k pushed through the softmax Jacobian m_k (delta_kj - m_j).
  const double weighted_ell = weights.dot(ell);
  for (Index j = 0; j < k_count; ++j) est.d_logits[j] = weights[j] * (weighted_ell - ell[j]);
  est.require_finite_fields("gmm_surrogate_gradient");
  return est;
}

/// Compares path gradients under p and C*p. Reverse KL must be bitwise
/// invariant; an alpha-family gradient scales by C^alpha (checked at 1e-10
/// relative). Runs unshifted: the shift would absorb the constant entirely.
inline double normalizer_scaling_check(const FDivergence& div, const GaussianParams& params,
                                       const TargetDensity& target, const NoiseBatch& noise,
                                       double scale_c) {
  if (!(scale_c > 0.0)) throw config_error("normalizer_scaling_check: C must be positive");
  EstimatorOptions opts;
  opts.use_ratio_shift = false;
  const GradEstimate base = path_gradient(params, target, div, noise, opts);
  const ScaledTarget scaled(target, std::log(scale_c));
  const GradEstimate shifted = path_gradient(params, scaled, div, noise, opts);
  const double factor = std::pow(scale_c, div.alpha_exponent());

  double worst = 0.0;
  auto compare = [&](const auto& a, const auto& b) {
    const double denom = std::max(1e-300, (factor * a).cwiseAbs().maxCoeff());
    worst = std::max(worst, ((b - factor * a).cwiseAbs().maxCoeff()) / denom);
  };
  compare(base.d_mean, shifted.d_mean);
  compare(base.d_scale, shifted.d_scale);
  return worst;
}

}  // namespace bwflow
