#pragma once

#include "bwflow/families.hpp"
#include "bwflow/gradients.hpp"
#include "bwflow/rng.hpp"
#include "bwflow/targets.hpp"
#include "bwflow/types.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bwflow {

/// State of a Gaussian flow, either in covariance coordinates (mu, Sigma) or
/// scale coordinates (mu, S).
struct FlowState {
  enum class Kind { Covariance, Scale };

  Kind kind = Kind::Covariance;
  RowVec mean;
  Mat mat;
  double t = 0.0;

  static FlowState covariance(RowVec mean, Mat cov, double t = 0.0) {
    return FlowState{Kind::Covariance, std::move(mean), std::move(cov), t};
  }
  static FlowState scale(RowVec mean, Mat s, double t = 0.0) {
    return FlowState{Kind::Scale, std::move(mean), std::move(s), t};
  }

  Mat covariance_matrix() const {
    return kind == Kind::Covariance ? mat : Mat(mat * mat.transpose());
  }
};

struct ParticleCloud {
  Mat positions;  // M x n
  double time = 0.0;
  std::uint64_t seed = 0;
};

struct MeanCovRhs {
  RowVec d_mean;
  Mat d_cov;
};
struct MeanScaleRhs {
  RowVec d_mean;
  Mat d_scale;
};

namespace detail {

inline Mat chol_factor_or_throw(const Mat& cov, const char* who) {
  Eigen::LLT<Mat> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() != Eigen::Success)
    throw numerical_error(std::string(who) + ": covariance lost positive definiteness");
  return llt.matrixL();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Covariance-space right-hand sides. The Monte Carlo kernels take the mean
// and an explicit scale factor B with Sigma = B B^T, so identities against
// scale-space runs can share the exact same samples x = mu + z B^T.

/// Hessian-free form: d mu = E[grad log(p/q)],
/// d Sigma = E[g^T (x - mu)] + transpose. Symmetric by construction.
inline MeanCovRhs bw_rhs_hessian_free_mc(const RowVec& mean, const Mat& factor,
                                         const TargetDensity& target, const NoiseBatch& noise) {
  const Index n = mean.cols();
  const ScaleFactor sf(factor);
  const Mat x = (noise.z() * factor.transpose()).rowwise() + mean;
  const Mat g = target.score_batch(x) - gaussian_score(mean, sf, x);
  RowVec d_mean = RowVec::Zero(n);
  Mat a = Mat::Zero(n, n);
  for (Index i = 0; i < x.rows(); ++i) {
    d_mean += g.row(i);
    a.noalias() += g.row(i).transpose() * (x.row(i) - mean);
  }
  d_mean /= static_cast<double>(x.rows());
  a /= static_cast<double>(x.rows());
  MeanCovRhs rhs{std::move(d_mean), a + a.transpose()};
  require_finite(rhs.d_cov, "bw_rhs_hessian_free_mc");
  require_finite(Mat(rhs.d_mean), "bw_rhs_hessian_free_mc");
  return rhs;
}

inline MeanCovRhs bw_rhs_hessian_free(const FlowState& state, const TargetDensity& target,
                                      const NoiseBatch& noise) {
  if (state.kind != FlowState::Kind::Covariance)
    throw config_error("bw_rhs_hessian_free: expected a covariance-variant state");
  return bw_rhs_hessian_free_mc(state.mean,
                                detail::chol_factor_or_throw(state.mat, "bw_rhs_hessian_free"),
                                target, noise);
}

/// Hessian form: d Sigma = 2I + E[hessian log p] Sigma + Sigma E[hessian log p],
/// d mu = E[score_p]. Exact for targets with constant Hessian.
inline MeanCovRhs bw_rhs_hessian(const FlowState& state, const TargetDensity& target,
                                 const NoiseBatch* noise = nullptr) {
  if (state.kind != FlowState::Kind::Covariance)
    throw config_error("bw_rhs_hessian: expected a covariance-variant state");
  if (!target.has_hessian()) throw config_error("bw_rhs_hessian: target lacks Hessian capability");
  const Index n = state.mean.cols();
  Mat expected_hessian;
  RowVec d_mean;
  if (target.hessian_is_constant()) {
    // Constant Hessian: both expectations in closed form, no sampling noise.
    expected_hessian = target.hessian(state.mean);
    const auto* gauss = dynamic_cast<const GaussianTarget*>(&target);
    if (gauss == nullptr)
      throw config_error("bw_rhs_hessian: analytic mean evolution needs a Gaussian target");
    d_mean = (gauss->mean() - state.mean) * gauss->precision();
  } else {
    if (noise == nullptr)
      throw config_error("bw_rhs_hessian: non-constant Hessian needs a noise batch");
    const Mat factor = detail::chol_factor_or_throw(state.mat, "bw_rhs_hessian");
    const Mat x = (noise.z() * factor.transpose()).rowwise() + state.mean;
    expected_hessian = Mat::Zero(n, n);
    for (Index i = 0; i < x.rows(); ++i) expected_hessian += target.hessian(x.row(i));
    expected_hessian /= static_cast<double>(x.rows());
    d_mean = target.score_batch(x).colwise().mean();
  }
  MeanCovRhs rhs;
  rhs.d_mean = std::move(d_mean);
  rhs.d_cov = 2.0 * Mat::Identity(n, n) + expected_hessian * state.mat + state.mat * expected_hessian;
  require_finite(rhs.d_cov, "bw_rhs_hessian");
  return rhs;
}

/// Sarkka form: d Sigma = 2I - E[(grad V)^T (x - mu) + (x - mu)^T grad V],
/// with V = -log p; d mu = E[score_p].
inline MeanCovRhs sarkka_rhs_mc(const RowVec& mean, const Mat& factor,
                                const TargetDensity& target, const NoiseBatch& noise) {
  const Index n = mean.cols();
  const Mat x = (noise.z() * factor.transpose()).rowwise() + mean;
  const Mat score_p = target.score_batch(x);
  RowVec d_mean = RowVec::Zero(n);
  Mat m = Mat::Zero(n, n);
  for (Index i = 0; i < x.rows(); ++i) {
    d_mean += score_p.row(i);
    m.noalias() += (-score_p.row(i)).transpose() * (x.row(i) - mean);
  }
  d_mean /= static_cast<double>(x.rows());
  m /= static_cast<double>(x.rows());
  MeanCovRhs rhs{std::move(d_mean), 2.0 * Mat::Identity(n, n) - m - m.transpose()};
  require_finite(rhs.d_cov, "sarkka_rhs_mc");
  return rhs;
}

inline MeanCovRhs sarkka_rhs(const FlowState& state, const TargetDensity& target,
                             const NoiseBatch& noise) {
  if (state.kind != FlowState::Kind::Covariance)
    throw config_error("sarkka_rhs: expected a covariance-variant state");
  return sarkka_rhs_mc(state.mean, detail::chol_factor_or_throw(state.mat, "sarkka_rhs"), target,
                       noise);
}

/// Sarkka form with the Gaussian expectations in closed form:
/// E[(grad V)^T (x - mu)] = P Sigma.
inline MeanCovRhs sarkka_rhs_analytic(const RowVec& mean, const Mat& cov,
                                      const GaussianTarget& target) {
  const Index n = mean.cols();
  const Mat m = target.precision() * cov;
  return MeanCovRhs{(target.mean() - mean) * target.precision(),
                    2.0 * Mat::Identity(n, n) - m - m.transpose()};
}

/// Hessian-free form with analytic Gaussian expectations:
/// E[g^T (x - mu)] = I - P Sigma.
inline MeanCovRhs bw_rhs_hessian_free_analytic(const RowVec& mean, const Mat& cov,
                                               const GaussianTarget& target) {
  const Index n = mean.cols();
  const Mat a = Mat::Identity(n, n) - target.precision() * cov;
  return MeanCovRhs{(target.mean() - mean) * target.precision(), a + a.transpose()};
}

// ---------------------------------------------------------------------------
// Scale-space right-hand side.

/// d mu = E[g], d S = E[g^T (x - mu) S^{-T}]; the contraction factor
/// (x - mu) S^{-T} reconstructs z exactly, so z is used directly. This is the
/// negated closed-form Gaussian path gradient term by term.
inline MeanScaleRhs scale_rhs(const FlowState& state, const TargetDensity& target,
                              const NoiseBatch& noise) {
  if (state.kind != FlowState::Kind::Scale)
    throw config_error("scale_rhs: expected a scale-variant state");
  const Index n = state.mean.cols();
  const ScaleFactor sf(state.mat);
  const Mat x = (noise.z() * state.mat.transpose()).rowwise() + state.mean;
  const Mat diff = target.score_batch(x) - gaussian_score(state.mean, sf, x);
  RowVec d_mean = RowVec::Zero(n);
  Mat d_scale = Mat::Zero(n, n);
  for (Index i = 0; i < x.rows(); ++i) {
    d_mean += diff.row(i);
    d_scale.noalias() += diff.row(i).transpose() * noise.z().row(i);
  }
  d_mean /= static_cast<double>(x.rows());
  d_scale /= static_cast<double>(x.rows());
  MeanScaleRhs rhs{std::move(d_mean), std::move(d_scale)};
  require_finite(rhs.d_scale, "scale_rhs");
  return rhs;
}

/// Analytic scale RHS for Gaussian targets: d S = hessian(log p) S + S^{-T}.
inline MeanScaleRhs scale_rhs_analytic(const RowVec& mean, const Mat& s,
                                       const GaussianTarget& target) {
  const ScaleFactor sf(s);
  return MeanScaleRhs{(target.mean() - mean) * target.precision(),
                      target.hessian(mean) * s + sf.inverse_transposed()};
}

// ---------------------------------------------------------------------------
// Forward Euler integration.

enum class FlowRhs { CovHessianFree, CovHessian, CovSarkka, Scale };

struct EulerOptions {
  double tau = 0.01;
  int steps = 1;
  int mc_samples = 100;
  std::uint64_t seed = 0;
  bool analytic = false;  // closed-form Gaussian expectations, no sampling
};

/// Integrates state_{k+1} = state_k + tau * rhs(state_k) with a fresh noise
/// stream per step (stream id = step index). Covariance iterates are
/// re-symmetrized every step; losing positive definiteness (or scale
/// nonsingularity) is a hard error carrying the step index.
inline std::vector<FlowState> forward_euler(const FlowState& init, FlowRhs rhs,
                                            const TargetDensity& target,
                                            const EulerOptions& opts) {
  if (!(opts.tau > 0.0)) throw config_error("forward_euler: tau must be positive");
  if (opts.steps < 0) throw config_error("forward_euler: steps must be nonnegative");
  if ((rhs == FlowRhs::Scale) != (init.kind == FlowState::Kind::Scale))
    throw config_error("forward_euler: state variant does not match the RHS selector");
  const auto* gauss = dynamic_cast<const GaussianTarget*>(&target);
  if (opts.analytic && gauss == nullptr)
    throw config_error("forward_euler: analytic expectations need a Gaussian target");

  std::vector<FlowState> path;
  path.reserve(static_cast<std::size_t>(opts.steps) + 1);
  path.push_back(init);
  FlowState state = init;
  const Index n = state.mean.cols();
  for (int k = 0; k < opts.steps; ++k) {
    try {
      if (rhs == FlowRhs::Scale) {
        MeanScaleRhs d = opts.analytic
                             ? scale_rhs_analytic(state.mean, state.mat, *gauss)
                             : scale_rhs(state, target,
                                         NoiseBatch(opts.seed, static_cast<std::uint64_t>(k),
                                                    opts.mc_samples, n));
        state.mean += opts.tau * d.d_mean;
        state.mat += opts.tau * d.d_scale;
        ScaleFactor check(state.mat);  // nonsingularity gate
        (void)check;
      } else {
        MeanCovRhs d;
        if (opts.analytic) {
          switch (rhs) {
            case FlowRhs::CovHessianFree:
              d = bw_rhs_hessian_free_analytic(state.mean, state.mat, *gauss);
              break;
            case FlowRhs::CovHessian: d = bw_rhs_hessian(state, target); break;
            default: d = sarkka_rhs_analytic(state.mean, state.mat, *gauss); break;
          }
        } else {
          NoiseBatch noise(opts.seed, static_cast<std::uint64_t>(k), opts.mc_samples, n);
          switch (rhs) {
            case FlowRhs::CovHessianFree: d = bw_rhs_hessian_free(state, target, noise); break;
            case FlowRhs::CovHessian: d = bw_rhs_hessian(state, target, &noise); break;
            default: d = sarkka_rhs(state, target, noise); break;
          }
        }
        state.mean += opts.tau * d.d_mean;
        state.mat += opts.tau * d.d_cov;
        state.mat = symmetrized(state.mat);
        detail::chol_factor_or_throw(state.mat, "forward_euler");  // PD gate
      }
    } catch (const numerical_error& err) {
      throw numerical_error("forward_euler: step " + std::to_string(k) + ": " + err.what());
    }
    state.t += opts.tau;
    path.push_back(state);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Langevin particles.

/// One Euler-Maruyama step of dx = score_p(x) dt + sqrt(2) dW.
inline ParticleCloud langevin_step(const ParticleCloud& cloud, const TargetDensity& target,
                                   double dt, const NoiseBatch& noise) {
  if (!(dt > 0.0)) throw config_error("langevin_step: dt must be positive");
  if (noise.rows() != cloud.positions.rows() || noise.cols() != cloud.positions.cols())
    throw config_error("langevin_step: noise shape mismatch");
  const Mat score = target.score_batch(cloud.positions);
  require_finite(score, "langevin_step");
  ParticleCloud next;
  next.positions = cloud.positions + dt * score + std::sqrt(2.0 * dt) * noise.z();
  next.time = cloud.time + dt;
  next.seed = cloud.seed;
  return next;
}

// ---------------------------------------------------------------------------
// f-divergence probability flow field and distillation.

/// Vector field of the probability flow ODE for D_f(p || q):
/// v(x) = grad_x [r f'(r) - f(r)] = h'(r) r (score_p(x) - score_q(x)).
/// For reverse KL the weight is exactly one, recovering score_p - score_q.
inline Mat f_flow_vector_field_batch(const Mat& x, const StopGradientRatio& ratio,
                                     const FDivergence& div) {
  const Vec log_r = ratio.log_r_batch(x);
  if (!log_r.allFinite()) throw numerical_error("f_flow_vector_field: non-finite log ratio");
  Mat field = ratio.grad_x_log_r_batch(x);
  require_finite(field, "f_flow_vector_field");
  for (Index i = 0; i < x.rows(); ++i) {
    const double w = div.h_prime_times_r_from_log(log_r[i]);
    if (!std::isfinite(w)) throw numerical_error("f_flow_vector_field: ratio weight overflow");
    field.row(i) *= w;
  }
  return field;
}

template <typename Params>
RowVec f_flow_vector_field(const RowVec& x, const Params& params, const TargetDensity& target,
                           const FDivergence& div) {
  StopGradientRatio ratio(target, params);
  return f_flow_vector_field_batch(Mat(x), ratio, div).row(0);
}

struct DistillResult {
  GradEstimate grad;
  Mat moved;  // particles after one Euler step along the flow field
};

/// Distillation step: move particles x' = x + tau v(x), freeze them, and take
/// the gradient of the matching loss l = 0.5 E |x_theta - x'|^2. Uses the raw
/// (unshifted) field, so the result equals tau times the unshifted path
/// gradient of the same divergence.
inline DistillResult distill_step(const GaussianParams& params, const TargetDensity& target,
                                  const FDivergence& div, double tau, const NoiseBatch& noise) {
  if (!(tau > 0.0)) throw config_error("distill_step: tau must be positive");
  const Index n = params.dim();
  const Index num = noise.rows();
  const Mat x = reparameterize(params, noise);
  StopGradientRatio ratio(target, params);
  const Mat field = f_flow_vector_field_batch(x, ratio, div);

  DistillResult out;
  out.moved = x + tau * field;
  out.grad.d_mean = RowVec::Zero(n);
  out.grad.d_scale = Mat::Zero(n, n);
  out.grad.sample_count = num;
  out.grad.seed = noise.seed();
  for (Index i = 0; i < num; ++i) {
    const RowVec residual = x.row(i) - out.moved.row(i);  // = -tau v(x_i)
    out.grad.d_mean += residual;
    out.grad.d_scale.noalias() += residual.transpose() * noise.z().row(i);
  }
  out.grad.d_mean /= static_cast<double>(num);
  out.grad.d_scale /= static_cast<double>(num);
  out.grad.require_finite_fields("distill_step");
  return out;
}

}  // namespace bwflow
