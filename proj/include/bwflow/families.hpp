#pragma once

#include "bwflow/gaussian_kernel.hpp"
#include "bwflow/linalg.hpp"
#include "bwflow/rng.hpp"
#include "bwflow/types.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace bwflow {

/// Full-scale Gaussian family N(mean, S S^T). S is dense and unconstrained
/// (not triangular): the submersion analysis lives on the full nonsingular
/// space, and constraining S would change the geometry.
struct GaussianParams {
  RowVec mean;
  Mat scale;

  Index dim() const { return mean.cols(); }
  ScaleFactor factor() const { return ScaleFactor(scale); }
  Mat covariance() const { return scale * scale.transpose(); }
};

struct DiagGaussianParams {
  RowVec mean;
  RowVec log_std;

  Index dim() const { return mean.cols(); }
  RowVec std_dev() const { return log_std.array().exp(); }
};

/// Mixture with softmax weights over logits.
struct MixtureParams {
  Vec logits;
  std::vector<GaussianParams> components;

  Index dim() const { return components.front().dim(); }
  Index num_components() const { return static_cast<Index>(components.size()); }

  Vec weights() const {
    const double m = logits.maxCoeff();
    Vec w = (logits.array() - m).exp();
    return w / w.sum();
  }
  Vec log_weights() const { return weights().array().log(); }
};

// ---------------------------------------------------------------------------
// Full-scale Gaussian

/// x_i = mean + z_i S^T, row by row. The Jacobian contraction rules the
/// gradient module relies on: dx/dmu = I and dx_i/dS_{i,k} = z_k.
inline Mat reparameterize(const GaussianParams& params, const NoiseBatch& noise) {
  if (noise.cols() != params.dim()) throw config_error("reparameterize: dimension mismatch");
  return (noise.z() * params.scale.transpose()).rowwise() + params.mean;
}

inline Vec log_density_batch(const GaussianParams& params, const ScaleFactor& factor,
                             const Mat& x) {
  return gaussian_log_density(params.mean, factor, x);
}
inline double log_density(const GaussianParams& params, const RowVec& x) {
  return gaussian_log_density(params.mean, params.factor(), x)[0];
}

inline Mat score_q_batch(const GaussianParams& params, const ScaleFactor& factor, const Mat& x) {
  return gaussian_score(params.mean, factor, x);
}
inline RowVec score_q(const GaussianParams& params, const RowVec& x) {
  return gaussian_score(params.mean, params.factor(), x).row(0);
}

/// Hessian of log q, constant in x for Gaussians: -Sigma^{-1}.
inline Mat hessian_log_q(const GaussianParams& params) {
  return gaussian_log_density_hessian(params.factor());
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian

inline Mat reparameterize(const DiagGaussianParams& params, const NoiseBatch& noise) {
  if (noise.cols() != params.dim()) throw config_error("reparameterize: dimension mismatch");
  Mat x = noise.z().array().rowwise() * params.std_dev().array();
  return x.rowwise() + params.mean;
}

inline Vec log_density_batch(const DiagGaussianParams& params, const Mat& x) {
  const RowVec inv_var = (-2.0 * params.log_std).array().exp();
  const double constant =
      -params.log_std.sum() - 0.5 * static_cast<double>(params.dim()) * kLogTwoPi;
  const Mat centered = x.rowwise() - params.mean;
  Vec out(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    out[i] = -0.5 * (centered.row(i).array().square() * inv_var.array()).sum() + constant;
  return out;
}
inline double log_density(const DiagGaussianParams& params, const RowVec& x) {
  return log_density_batch(params, Mat(x))[0];
}

inline Mat score_q_batch(const DiagGaussianParams& params, const Mat& x) {
  const RowVec inv_var = (-2.0 * params.log_std).array().exp();
  return -((x.rowwise() - params.mean).array().rowwise() * inv_var.array());
}
inline RowVec score_q(const DiagGaussianParams& params, const RowVec& x) {
  return score_q_batch(params, Mat(x)).row(0);
}

inline Mat hessian_log_q(const DiagGaussianParams& params) {
  return Mat((-(-2.0 * params.log_std).array().exp()).matrix().asDiagonal());
}

// ---------------------------------------------------------------------------
// Mixture

inline Vec mixture_component_log_terms(const MixtureParams& params,
                                       const std::vector<ScaleFactor>& factors,
                                       const RowVec& x) {
  const Vec log_w = params.log_weights();
  Vec terms(params.num_components());
  for (Index k = 0; k < params.num_components(); ++k)
    terms[k] = log_w[k] + gaussian_log_density(params.components[k].mean, factors[k], x)[0];
  return terms;
}

inline std::vector<ScaleFactor> mixture_factors(const MixtureParams& params) {
  std::vector<ScaleFactor> factors;
  factors.reserve(params.components.size());
  for (const auto& c : params.components) factors.emplace_back(c.scale);
  return factors;
}

inline double mixture_log_density(const MixtureParams& params,
                                  const std::vector<ScaleFactor>& factors, const RowVec& x) {
  return log_sum_exp(mixture_component_log_terms(params, factors, x));
}
inline double mixture_log_density(const MixtureParams& params, const RowVec& x) {
  return mixture_log_density(params, mixture_factors(params), x);
}

/// Responsibility-weighted component scores.
inline RowVec mixture_score(const MixtureParams& params, const std::vector<ScaleFactor>& factors,
                            const RowVec& x) {
  const Vec terms = mixture_component_log_terms(params, factors, x);
  const double lse = log_sum_exp(terms);
  RowVec out = RowVec::Zero(params.dim());
  for (Index k = 0; k < params.num_components(); ++k)
    out += std::exp(terms[k] - lse) *
           gaussian_score(params.components[k].mean, factors[k], x).row(0);
  return out;
}
inline RowVec mixture_score(const MixtureParams& params, const RowVec& x) {
  return mixture_score(params, mixture_factors(params), x);
}

/// Stratified draw from component k only; mixture weights play no part.
inline Mat mixture_component_sample(const MixtureParams& params, Index k,
                                    const NoiseBatch& noise) {
  if (k < 0 || k >= params.num_components())
    throw config_error("mixture_component_sample: component index out of range");
  return reparameterize(params.components[k], noise);
}

}  // namespace bwflow
