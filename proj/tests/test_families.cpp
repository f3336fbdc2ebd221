#include "bwflow/families.hpp"

#include "bwflow/rng.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace bwflow;
using oracles::TestRng;

TEST_CASE("noise batches are reproducible") {
  const NoiseBatch a(42, 3, 16, 2);
  const NoiseBatch b(42, 3, 16, 2);
  CHECK((a.z() - b.z()).cwiseAbs().maxCoeff() == 0.0);
  const NoiseBatch c(42, 4, 16, 2);
  CHECK((a.z() - c.z()).cwiseAbs().maxCoeff() > 0.0);
  // sane first and second moments
  const NoiseBatch big(1, 0, 100000, 2);
  CHECK(std::abs(big.z().mean()) < 0.01);
  CHECK(big.z().array().square().mean() == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("reparameterize") {
  Mat s(2, 2);
  s << 1.0, 0.0, 0.5, 2.0;
  RowVec mu(2);
  mu << -1.0, 2.0;
  GaussianParams params{mu, s};

  SECTION("hand-computed sample") {
    // z = (1, 1): z S^T = (1, 2.5)
    const NoiseBatch z = NoiseBatch::from_matrix(Mat::Ones(1, 2));
    const Mat x = reparameterize(params, z);
    CHECK(x(0, 0) == Catch::Approx(-1.0 + 1.0).margin(1e-15));
    CHECK(x(0, 1) == Catch::Approx(2.0 + 2.5).margin(1e-15));
  }
  SECTION("zero noise returns the mean") {
    const NoiseBatch z = NoiseBatch::from_matrix(Mat::Zero(3, 2));
    const Mat x = reparameterize(params, z);
    for (Index i = 0; i < 3; ++i) CHECK((x.row(i) - mu).norm() == 0.0);
  }
  SECTION("identity scale, zero mean passes z through") {
    GaussianParams std_params{RowVec::Zero(2), Mat::Identity(2, 2)};
    const NoiseBatch z(5, 0, 4, 2);
    CHECK((reparameterize(std_params, z) - z.z()).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("empirical covariance matches S S^T") {
    const NoiseBatch z(9, 0, 100000, 2);
    const Mat x = reparameterize(params, z);
    const RowVec mean = x.colwise().mean();
    const Mat centered = x.rowwise() - mean;
    const Mat cov = centered.transpose() * centered / double(x.rows() - 1);
    const Mat expected = s * s.transpose();
    // entrywise within 5 standard errors (SE ~ sqrt(2/N) * scale)
    const double se = 5.0 * std::sqrt(2.0 / double(x.rows())) * expected.cwiseAbs().maxCoeff();
    CHECK((cov - expected).cwiseAbs().maxCoeff() < se);
  }
  SECTION("dimension mismatch") {
    const NoiseBatch z(0, 0, 2, 3);
    CHECK_THROWS_AS(reparameterize(params, z), config_error);
  }
}

TEST_CASE("gaussian log density and scores") {
  SECTION("standard normal at origin") {
    GaussianParams params{RowVec::Zero(3), Mat::Identity(3, 3)};
    CHECK(log_density(params, RowVec::Zero(3)) ==
          Catch::Approx(-1.5 * std::log(2.0 * M_PI)).margin(1e-12));
    CHECK(score_q(params, params.mean).norm() == 0.0);
  }
  SECTION("1D hand case") {
    Mat s(1, 1);
    s << 2.0;
    GaussianParams params{RowVec::Zero(1), s};
    RowVec x(1);
    x << 2.0;
    CHECK(score_q(params, x)[0] == Catch::Approx(-0.5).margin(1e-14));
  }
  SECTION("score matches finite differences, full family") {
    TestRng rng(21);
    for (int rep = 0; rep < 100; ++rep) {
      GaussianParams params{rng.row(3), rng.nonsingular(3)};
      const RowVec x = 2.0 * rng.row(3);
      const RowVec s = score_q(params, x);
      for (Index i = 0; i < 3; ++i) {
        RowVec hi = x, lo = x;
        hi[i] += 1e-5;
        lo[i] -= 1e-5;
        const double fd = (log_density(params, hi) - log_density(params, lo)) / 2e-5;
        CHECK(std::abs(s[i] - fd) / (1.0 + std::abs(s[i])) < 1e-5);
      }
    }
  }
  SECTION("score matches finite differences, diagonal family") {
    TestRng rng(23);
    for (int rep = 0; rep < 100; ++rep) {
      DiagGaussianParams params{rng.row(3), 0.5 * rng.row(3)};
      const RowVec x = 2.0 * rng.row(3);
      const RowVec s = score_q(params, x);
      for (Index i = 0; i < 3; ++i) {
        RowVec hi = x, lo = x;
        hi[i] += 1e-5;
        lo[i] -= 1e-5;
        const double fd = (log_density(params, hi) - log_density(params, lo)) / 2e-5;
        CHECK(std::abs(s[i] - fd) / (1.0 + std::abs(s[i])) < 1e-5);
      }
    }
  }
  SECTION("hessian is -Sigma^{-1}") {
    TestRng rng(29);
    const Mat s = rng.nonsingular(3);
    GaussianParams params{RowVec::Zero(3), s};
    const Mat h = hessian_log_q(params);
    const Mat sigma = s * s.transpose();
    CHECK((h * sigma + Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("singular scale errors") {
    Mat s = Mat::Zero(2, 2);
    s(0, 0) = 1.0;
    GaussianParams params{RowVec::Zero(2), s};
    CHECK_THROWS_AS(log_density(params, RowVec::Zero(2)), numerical_error);
  }
}

TEST_CASE("mixture family") {
  MixtureParams mix;
  mix.logits = Vec::Zero(2);
  Mat s1(1, 1), s2(1, 1);
  s1 << 1.0;
  s2 << 1.0;
  RowVec m1(1), m2(1);
  m1 << -1.0;
  m2 << 1.0;
  mix.components.push_back(GaussianParams{m1, s1});
  mix.components.push_back(GaussianParams{m2, s2});

  SECTION("weights on the simplex") {
    const Vec w = mix.weights();
    CHECK(w.sum() == Catch::Approx(1.0).margin(1e-12));
    CHECK(w.minCoeff() > 0.0);
  }
  SECTION("K = 1 reduces to the single Gaussian") {
    MixtureParams single;
    single.logits = Vec::Zero(1);
    single.components.push_back(GaussianParams{m1, s1});
    RowVec x(1);
    x << 0.3;
    CHECK(mixture_log_density(single, x) ==
          Catch::Approx(log_density(single.components[0], x)).margin(1e-14));
    CHECK(mixture_score(single, x)[0] ==
          Catch::Approx(score_q(single.components[0], x)[0]).margin(1e-14));
  }
  SECTION("symmetric mixture has zero score at the center") {
    CHECK(std::abs(mixture_score(mix, RowVec::Zero(1))[0]) < 1e-15);
  }
  SECTION("score matches finite differences") {
    TestRng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
      const RowVec x = 2.0 * rng.row(1);
      const double s = mixture_score(mix, x)[0];
      RowVec hi = x, lo = x;
      hi[0] += 1e-6;
      lo[0] -= 1e-6;
      const double fd = (mixture_log_density(mix, hi) - mixture_log_density(mix, lo)) / 2e-6;
      CHECK(std::abs(s - fd) / (1.0 + std::abs(s)) < 1e-6);
    }
  }
  SECTION("mixture density integrates to one") {
    const double integral = oracles::adaptive_simpson(
        [&](double t) {
          RowVec x(1);
          x << t;
          return std::exp(mixture_log_density(mix, x));
        },
        -14.0, 14.0, 1e-8);
    CHECK(integral == Catch::Approx(1.0).margin(1e-4));
  }
  SECTION("component sampling ignores weights") {
    const NoiseBatch z(13, 0, 8, 1);
    const Mat a = mixture_component_sample(mix, 0, z);
    MixtureParams tilted = mix;
    tilted.logits[0] = 5.0;
    const Mat b = mixture_component_sample(tilted, 0, z);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a - reparameterize(mix.components[0], z)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(mixture_component_sample(mix, 2, z), config_error);
  }
  SECTION("component empirical mean within CLT bound") {
    const Index n = 100000;
    const NoiseBatch z(17, 0, n, 1);
    const Mat draws = mixture_component_sample(mix, 1, z);
    CHECK(std::abs(draws.col(0).mean() - 1.0) < 4.0 / std::sqrt(double(n)));
  }
}

TEST_CASE("zero-mean score identity in theta") {
  // MC mean of grad_mu log q(x; theta) at sampled x is within 4 SE of zero.
  Mat s(2, 2);
  s << 1.0, 0.0, -0.3, 0.8;
  GaussianParams params{RowVec::Ones(2), s};
  const Index n = 100000;
  const NoiseBatch noise(51, 0, n, 2);
  const Mat x = reparameterize(params, noise);
  const ScaleFactor factor(params.scale);
  // grad_mu log q = (x - mu) Sigma^{-1} = -score_q
  const Mat grad_mu = -score_q_batch(params, factor, x);
  const RowVec mean = grad_mu.colwise().mean();
  for (Index i = 0; i < 2; ++i) {
    const double sd = std::sqrt((grad_mu.col(i).array() - mean[i]).square().mean());
    CHECK(std::abs(mean[i]) < 4.0 * sd / std::sqrt(double(n)));
  }
}
