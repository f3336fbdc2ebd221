#pragma once

#include "bwflow/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace bwflow {

/// Deterministic standard-normal batch. Identical (seed, stream_id, rows, cols)
/// always yields identical values, independent of platform or standard library:
/// the uniform-to-normal transform is an explicit Box-Muller rather than
/// std::normal_distribution (whose draw sequence is implementation-defined).
class NoiseBatch {
 public:
  NoiseBatch(std::uint64_t seed, std::uint64_t stream_id, Index rows, Index cols)
      : seed_(seed), stream_id_(stream_id), z_(rows, cols) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32)};
    std::mt19937_64 eng(seq);
    auto uniform01 = [&eng]() {
      // 53-bit mantissa in [0, 1)
      return static_cast<double>(eng() >> 11) * 0x1.0p-53;
    };
    const double two_pi = 2.0 * M_PI;
    const Index total = rows * cols;
    double* data = z_.data();  // row-major fill through an index map
    Index written = 0;
    while (written < total) {
      const double u1 = uniform01();
      const double u2 = uniform01();
      const double radius = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), never log(0)
      const double a = radius * std::cos(two_pi * u2);
      const double b = radius * std::sin(two_pi * u2);
      put(data, written++, a);
      if (written < total) put(data, written++, b);
    }
  }

  /// Wraps explicit draws (twin-run experiments, hand-built cases).
  static NoiseBatch from_matrix(Mat z, std::uint64_t seed = 0, std::uint64_t stream_id = 0) {
    NoiseBatch out(seed, stream_id);
    out.z_ = std::move(z);
    return out;
  }

  const Mat& z() const { return z_; }
  Index rows() const { return z_.rows(); }
  Index cols() const { return z_.cols(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  NoiseBatch(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  void put(double* data, Index linear, double v) {
    // Eigen default storage is column-major; fill in row-major sample order so
    // that sample i is fully determined by the draws before sample i+1.
    const Index r = linear / z_.cols();
    const Index c = linear % z_.cols();
    data[c * z_.rows() + r] = v;
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  Mat z_;
};

}  // namespace bwflow
