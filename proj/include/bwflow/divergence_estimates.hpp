#pragma once

#include "bwflow/divergences.hpp"
#include "bwflow/families.hpp"
#include "bwflow/gradients.hpp"
#include "bwflow/linalg.hpp"
#include "bwflow/targets.hpp"

#include <cmath>

namespace bwflow {

/// Monte Carlo estimate of D_f(p || q) = E_q[f(p/q)]. Needs the true density,
/// hence a known normalizer; gradients never do.
template <typename Params>
double estimate_divergence_mc(const FDivergence& div, const Params& params,
                              const TargetDensity& target, const NoiseBatch& noise) {
  const auto log_norm = target.log_normalizer();
  if (!log_norm)
    throw config_error("divergence values require normalized target; gradients do not");
  const Mat x = reparameterize(params, noise);
  StopGradientRatio ratio(target, params);
  const Vec log_r = ratio.log_r_batch(x).array() - *log_norm;
  if (!log_r.allFinite()) throw numerical_error("estimate_divergence_mc: non-finite log ratio");
  double sum = 0.0;
  for (Index i = 0; i < log_r.size(); ++i) sum += div.f_from_log(log_r[i]);
  require_finite(sum, "estimate_divergence_mc");
  return sum / static_cast<double>(log_r.size());
}

/// Surrogate objective L = -mean h(r) evaluated through log-sum-exp, so the
/// ratios are exponentiated only after averaging in log space.
inline double surrogate_objective_from_log_ratios(const FDivergence& div, const Vec& log_r) {
  if (log_r.size() == 0) throw config_error("surrogate objective: empty batch");
  switch (div.kind()) {
    case DivergenceKind::ReverseKL: return 1.0 - log_r.mean();
    case DivergenceKind::ForwardKL: return -std::exp(log_mean_exp(log_r));
    case DivergenceKind::ChiSquared: return 1.0 - std::exp(log_mean_exp(2.0 * log_r));
    case DivergenceKind::Hellinger: return 1.0 - std::exp(log_mean_exp(0.5 * log_r));
    case DivergenceKind::Alpha: {
      const double a = div.alpha_exponent();
      return (1.0 - std::exp(log_mean_exp(a * log_r))) / a;
    }
  }
  return 0.0;
}

}  // namespace bwflow
