#pragma once

#include "bwflow/types.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace bwflow {

enum class DivergenceKind { ReverseKL, ForwardKL, ChiSquared, Hellinger, Alpha };

/// An f-divergence as the quintuple (f, f', f'', h, h') with
/// h(r) = r f'(r) - f(r) and h'(r) = r f''(r). All ratio arithmetic flows
/// through log r; the *_from_log entry points are what the estimators use,
/// so the raw ratio is never materialized where it could overflow.
///
/// Every member of the family here has h'(r) * r = coeff * r^alpha, which is
/// the single weight the path-derivative estimator needs per sample.
class FDivergence {
 public:
  FDivergence(DivergenceKind kind, double alpha, std::string name)
      : kind_(kind), alpha_(alpha), name_(std::move(name)) {}

  DivergenceKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  /// The alpha for the normalizer-scaling law grad(C*p) = C^alpha grad(p):
  /// 0 reverse KL, 1 forward KL, 2 chi^2, 0.5 Hellinger.
  double alpha_exponent() const { return alpha_; }

  double f(double r) const {
    check_ratio(r);
    return f_from_log(std::log(r));
  }
  double f_prime(double r) const {
    check_ratio(r);
    switch (kind_) {
      case DivergenceKind::ReverseKL: return -1.0 / r;
      case DivergenceKind::ForwardKL: return std::log(r) + 1.0;
      case DivergenceKind::ChiSquared: return 2.0 * (r - 1.0);
      case DivergenceKind::Hellinger: return 1.0 - 1.0 / std::sqrt(r);
      case DivergenceKind::Alpha: return (std::pow(r, alpha_ - 1.0) - 1.0) / (alpha_ - 1.0);
    }
    return 0.0;
  }
  double f_double_prime(double r) const {
    check_ratio(r);
    switch (kind_) {
      case DivergenceKind::ReverseKL: return 1.0 / (r * r);
      case DivergenceKind::ForwardKL: return 1.0 / r;
      case DivergenceKind::ChiSquared: return 2.0;
      case DivergenceKind::Hellinger: return 0.5 / (r * std::sqrt(r));
      case DivergenceKind::Alpha: return std::pow(r, alpha_ - 2.0);
    }
    return 0.0;
  }
  double h(double r) const {
    check_ratio(r);
    return h_from_log(std::log(r));
  }
  double h_prime(double r) const {
    check_ratio(r);
    return h_prime_from_log(std::log(r));
  }

  double f_from_log(double log_r) const {
    switch (kind_) {
      case DivergenceKind::ReverseKL: return -log_r;
      case DivergenceKind::ForwardKL: return std::exp(log_r) * log_r;
      case DivergenceKind::ChiSquared: {
        const double d = std::expm1(log_r);  // r - 1
        return d * d;
      }
      case DivergenceKind::Hellinger: {
        const double d = std::expm1(0.5 * log_r);
        return d * d;
      }
      case DivergenceKind::Alpha:
        return (std::exp(alpha_ * log_r) - alpha_ * std::exp(log_r) - (1.0 - alpha_)) /
               (alpha_ * (alpha_ - 1.0));
    }
    return 0.0;
  }

  double h_from_log(double log_r) const {
    switch (kind_) {
      case DivergenceKind::ReverseKL: return log_r - 1.0;
      case DivergenceKind::ForwardKL: return std::exp(log_r);
      case DivergenceKind::ChiSquared: return std::expm1(2.0 * log_r);  // r^2 - 1
      case DivergenceKind::Hellinger: return std::expm1(0.5 * log_r);   // sqrt(r) - 1
      case DivergenceKind::Alpha: return std::expm1(alpha_ * log_r) / alpha_;
    }
    return 0.0;
  }

  double h_prime_from_log(double log_r) const {
    switch (kind_) {
      case DivergenceKind::ReverseKL: return std::exp(-log_r);
      case DivergenceKind::ForwardKL: return 1.0;
      case DivergenceKind::ChiSquared: return 2.0 * std::exp(log_r);
      case DivergenceKind::Hellinger: return 0.5 * std::exp(-0.5 * log_r);
      case DivergenceKind::Alpha: return std::exp((alpha_ - 1.0) * log_r);
    }
    return 0.0;
  }

  /// h'(r) * r, the per-sample weight of the path-derivative estimator.
  /// Reverse KL returns the constant 1.0 so its gradients are shift-exact.
  double h_prime_times_r_from_log(double log_r) const {
    switch (kind_) {
      case DivergenceKind::ReverseKL: return 1.0;
      case DivergenceKind::ForwardKL: return std::exp(log_r);
      case DivergenceKind::ChiSquared: return 2.0 * std::exp(2.0 * log_r);
      case DivergenceKind::Hellinger: return 0.5 * std::exp(0.5 * log_r);
      case DivergenceKind::Alpha: return std::exp(alpha_ * log_r);
    }
    return 0.0;
  }

 private:
  static void check_ratio(double r) {
    if (!(r > 0.0)) throw config_error("f-divergence: ratio must be positive");
  }

  DivergenceKind kind_;
  double alpha_;
  std::string name_;
};

inline FDivergence make_divergence(DivergenceKind kind,
                                   std::optional<double> alpha = std::nullopt) {
  switch (kind) {
    case DivergenceKind::ReverseKL: return FDivergence(kind, 0.0, "reverse_kl");
    case DivergenceKind::ForwardKL: return FDivergence(kind, 1.0, "forward_kl");
    case DivergenceKind::ChiSquared: return FDivergence(kind, 2.0, "chi2");
    case DivergenceKind::Hellinger: return FDivergence(kind, 0.5, "hellinger");
    case DivergenceKind::Alpha: {
      if (!alpha) throw config_error("alpha divergence requires an exponent");
      if (*alpha == 0.0)
        throw config_error("alpha=0 is reverse KL; use the reverse_kl variant");
      if (*alpha == 1.0)
        throw config_error("alpha=1 is forward KL; use the forward_kl variant");
      return FDivergence(kind, *alpha, "alpha:" + std::to_string(*alpha));
    }
  }
  throw config_error("unknown divergence kind");
}

/// Parses the CLI/config spelling: "reverse_kl", "forward_kl", "chi2",
/// "hellinger", or "alpha:<value>".
inline FDivergence make_divergence(const std::string& spec) {
  if (spec == "reverse_kl") return make_divergence(DivergenceKind::ReverseKL);
  if (spec == "forward_kl") return make_divergence(DivergenceKind::ForwardKL);
  if (spec == "chi2") return make_divergence(DivergenceKind::ChiSquared);
  if (spec == "hellinger") return make_divergence(DivergenceKind::Hellinger);
  if (spec.rfind("alpha:", 0) == 0) {
    std::size_t used = 0;
    double alpha = 0.0;
    const std::string tail = spec.substr(6);
    try {
      alpha = std::stod(tail, &used);
    } catch (const std::exception&) {
      throw config_error("divergence: cannot parse alpha in '" + spec + "'");
    }
    if (used != tail.size()) throw config_error("divergence: trailing junk in '" + spec + "'");
    return make_divergence(DivergenceKind::Alpha, alpha);
  }
  throw config_error("unknown divergence '" + spec +
                     "' (expected reverse_kl, forward_kl, chi2, hellinger, alpha:<a>)");
}

/// First variation of F_f(q) at ratio r: f(r) - r f'(r) = -h(r).
inline double first_variation(const FDivergence& div, double r) {
  if (!(r > 0.0)) throw config_error("first_variation: r must be positive");
  return -div.h(r);
}

}  // namespace bwflow
