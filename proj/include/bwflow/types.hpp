#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

// Row-vector convention throughout: samples, means and scores are 1 x n rows,
// batches are N x n with one sample per row, and x = mu + z * S^T.

namespace bwflow {

using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Raised when a computation leaves the valid numerical domain
/// (singular scale, PD loss, non-finite values). CLI maps this to exit code 2.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for invalid configuration or arguments. CLI maps this to exit code 1.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw numerical_error(std::string(what) + ": non-finite value");
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw numerical_error(std::string(what) + ": non-finite value");
}

}  // namespace bwflow
