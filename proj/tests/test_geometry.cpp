#include "bwflow/geometry.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace bwflow;
using oracles::TestRng;

TEST_CASE("sqrtm_psd basics") {
  SECTION("identity") {
    SymmetricPD eye(Mat::Identity(3, 3));
    CHECK((sqrtm_psd(eye).matrix() - Mat::Identity(3, 3)).norm() < 1e-14);
  }
  SECTION("diagonal") {
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 9.0;
    const Mat r = sqrtm_psd(SymmetricPD(d)).matrix();
    CHECK(r(0, 0) == Catch::Approx(2.0).margin(1e-12));
    CHECK(r(1, 1) == Catch::Approx(3.0).margin(1e-12));
  }
  SECTION("reconstruction on random SPD") {
    TestRng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      const Mat a = rng.spd(4);
      const Mat r = sqrtm_psd(SymmetricPD(a)).matrix();
      CHECK((r * r - a).cwiseAbs().maxCoeff() < 1e-9 * a.cwiseAbs().maxCoeff());
    }
  }
  SECTION("rejects genuinely indefinite input") {
    Mat bad = Mat::Identity(2, 2);
    bad(1, 1) = -0.5;
    CHECK_THROWS_AS(sqrtm_psd(SymmetricPD(bad, false)), numerical_error);
  }
}

TEST_CASE("Bures distance") {
  SECTION("coincident") {
    TestRng rng(3);
    const Mat a = rng.spd(3);
    CHECK(bures_distance_sq(SymmetricPD(a), SymmetricPD(a)) < 1e-10);
  }
  SECTION("commuting closed form diag(4,1) vs I") {
    Mat a = Mat::Identity(2, 2);
    a(0, 0) = 4.0;
    const Mat b = Mat::Identity(2, 2);
    CHECK(bures_distance_sq(SymmetricPD(a), SymmetricPD(b)) == Catch::Approx(1.0).margin(1e-10));
  }
  SECTION("I vs 4I in 2D") {
    CHECK(bures_distance_sq(SymmetricPD(Mat::Identity(2, 2)),
                            SymmetricPD(Mat(4.0 * Mat::Identity(2, 2)))) ==
          Catch::Approx(2.0).margin(1e-10));
  }
  SECTION("metric axioms on random triples") {
    TestRng rng(17);
    for (int rep = 0; rep < 100; ++rep) {
      SymmetricPD a(rng.spd(3)), b(rng.spd(3)), c(rng.spd(3));
      const double ab = std::sqrt(bures_distance_sq(a, b));
      const double ba = std::sqrt(bures_distance_sq(b, a));
      CHECK(std::abs(ab - ba) <= 1e-9 * std::max(1.0, ab));
      const double ac = std::sqrt(bures_distance_sq(a, c));
      const double cb = std::sqrt(bures_distance_sq(c, b));
      CHECK(ab <= ac + cb + 1e-9);
    }
  }
  SECTION("commuting pairs match spectral closed form") {
    TestRng rng(23);
    for (int rep = 0; rep < 20; ++rep) {
      const Mat basis = rng.spd(3);
      Eigen::SelfAdjointEigenSolver<Mat> es(basis);
      Vec la(3), lb(3);
      for (Index i = 0; i < 3; ++i) {
        la[i] = rng.uniform(0.2, 4.0);
        lb[i] = rng.uniform(0.2, 4.0);
      }
      const Mat a = es.eigenvectors() * la.asDiagonal() * es.eigenvectors().transpose();
      const Mat b = es.eigenvectors() * lb.asDiagonal() * es.eigenvectors().transpose();
      double expected = 0.0;
      for (Index i = 0; i < 3; ++i) {
        const double d = std::sqrt(la[i]) - std::sqrt(lb[i]);
        expected += d * d;
      }
      CHECK(bures_distance_sq(SymmetricPD(0.5 * (a + a.transpose())),
                              SymmetricPD(0.5 * (b + b.transpose()))) ==
            Catch::Approx(expected).margin(1e-10));
    }
  }
}

TEST_CASE("w2_gaussian") {
  SECTION("identical Gaussians") {
    TestRng rng(5);
    const Mat a = rng.spd(2);
    const RowVec m = rng.row(2);
    CHECK(w2_gaussian(m, SymmetricPD(a), m, SymmetricPD(a)) < 1e-6);
  }
  SECTION("mean-only term") {
    RowVec mq(2), mp(2);
    mq << 4.0, 2.0;
    mp << 0.0, 0.0;
    const SymmetricPD c(Mat::Identity(2, 2));
    CHECK(w2_gaussian(mq, c, mp, c) == Catch::Approx(std::sqrt(20.0)).margin(1e-10));
  }
  SECTION("matches 1D quantile-coupling Monte Carlo") {
    // 1D W2^2 between N(m1, s1^2) and N(m2, s2^2) via the quantile coupling:
    // average (F_q^{-1}(u) - F_p^{-1}(u))^2 over a uniform grid of u.
    const double m1 = 0.4, s1 = 1.3, m2 = -0.2, s2 = 0.7;
    double acc = 0.0;
    const int grid = 20000;
    for (int i = 0; i < grid; ++i) {
      const double u = (i + 0.5) / grid;
      // inverse normal CDF via erfinv relation and Newton refinement
      double z = 0.0;
      for (int it = 0; it < 60; ++it) {
        const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
        const double pdf = oracles::normal_pdf(z, 0.0, 1.0);
        const double step = (cdf - u) / std::max(pdf, 1e-300);
        z -= std::clamp(step, -1.0, 1.0);
        if (std::abs(step) < 1e-13) break;
      }
      const double d = (m1 + s1 * z) - (m2 + s2 * z);
      acc += d * d;
    }
    acc /= grid;
    RowVec mq(1), mp(1);
    mq << m1;
    mp << m2;
    Mat cq(1, 1), cp(1, 1);
    cq << s1 * s1;
    cp << s2 * s2;
    const double w2 = w2_gaussian(mq, SymmetricPD(cq), mp, SymmetricPD(cp));
    CHECK(w2 == Catch::Approx(std::sqrt(acc)).margin(1e-2));
  }
}

TEST_CASE("dpi and tangent decomposition") {
  TestRng rng(31);
  const Mat s = rng.nonsingular(3);

  SECTION("dpi at X = S gives 2 Sigma") {
    CHECK((dpi(s, s) - 2.0 * s * s.transpose()).norm() < 1e-12);
  }
  SECTION("skew at identity is vertical") {
    Mat x = Mat::Zero(2, 2);
    x(0, 1) = 1.0;
    x(1, 0) = -1.0;
    CHECK(dpi(Mat::Identity(2, 2), x).norm() < 1e-15);
    const auto dec = horizontal_projection(Mat::Identity(2, 2), x);
    CHECK(dec.horizontal.norm() < 1e-12);
    CHECK((dec.vertical - x).norm() < 1e-12);
  }
  SECTION("dpi output symmetric") {
    const Mat x = rng.matrix(3, 3);
    const Mat out = dpi(s, x);
    CHECK((out - out.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }
  SECTION("round-trips X = H S") {
    for (int rep = 0; rep < 10; ++rep) {
      Mat h = rng.matrix(3, 3);
      h = symmetrized(h);
      const auto dec = horizontal_projection(s, h * s);
      CHECK((dec.h - h).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(dec.vertical.norm() < 1e-10 * std::max(1.0, h.norm()));
    }
  }
  SECTION("decomposition invariants") {
    for (int rep = 0; rep < 10; ++rep) {
      const Mat x = rng.matrix(3, 3);
      const auto dec = horizontal_projection(s, x);
      CHECK((dec.horizontal + dec.vertical - x).cwiseAbs().maxCoeff() < 1e-10);
      const double inner = (dec.horizontal.transpose() * dec.vertical).trace();
      CHECK(std::abs(inner) < 1e-8 * std::max(1.0, x.squaredNorm()));
      CHECK((dec.vertical * s.transpose() + s * dec.vertical.transpose()).cwiseAbs().maxCoeff() <
            1e-8);
    }
  }
}

TEST_CASE("riemannian gradients") {
  SECTION("rejects non-horizontal input") {
    Mat skew = Mat::Zero(2, 2);
    skew(0, 1) = 1.0;
    skew(1, 0) = -1.0;
    CHECK_THROWS_AS(riemannian_grad_Q(Mat::Identity(2, 2), skew), numerical_error);
  }
  SECTION("scalar hand case") {
    // p = N(0, 1), S = 2 (n = 1): grad_S = 1.5, grad_BW = 0.75, grad_Q = dpi = 6.
    Mat s(1, 1);
    s << 2.0;
    Mat grad(1, 1);
    grad << 1.5;
    CHECK(riemannian_grad_BW(s, grad)(0, 0) == Catch::Approx(0.75).margin(1e-12));
    CHECK(riemannian_grad_Q(s, grad)(0, 0) == Catch::Approx(6.0).margin(1e-12));
  }
  SECTION("submersion isometry tr(H2 Sigma H1) = tr(X^T Y)") {
    TestRng rng(41);
    for (int rep = 0; rep < 20; ++rep) {
      const Mat s = rng.nonsingular(3);
      const Mat sigma = s * s.transpose();
      Mat h1 = rng.matrix(3, 3), h2 = rng.matrix(3, 3);
      h1 = symmetrized(h1);
      h2 = symmetrized(h2);
      const Mat x = h1 * s, y = h2 * s;
      const double lhs = (h2 * sigma * h1).trace();
      const double rhs = (x.transpose() * y).trace();
      CHECK(std::abs(lhs - rhs) < 1e-9 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("optimal transport map and geodesics") {
  TestRng rng(53);
  SECTION("B = A gives identity") {
    const Mat a = rng.spd(3);
    CHECK((ot_map(SymmetricPD(a), SymmetricPD(a)) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <
          1e-9);
  }
  SECTION("scalar case") {
    Mat a(1, 1), b(1, 1);
    a << 1.0;
    b << 4.0;
    CHECK(ot_map(SymmetricPD(a), SymmetricPD(b))(0, 0) == Catch::Approx(2.0).margin(1e-12));
  }
  SECTION("push-forward residual") {
    for (int rep = 0; rep < 20; ++rep) {
      const Mat a = rng.spd(3), b = rng.spd(3);
      const Mat t = ot_map(SymmetricPD(a), SymmetricPD(b));
      CHECK((t * a * t.transpose() - b).norm() < 1e-8 * b.norm());
    }
  }
  SECTION("geodesic endpoints and midpoint") {
    Mat a(1, 1), b(1, 1);
    a << 1.0;
    b << 4.0;
    CHECK(geodesic(SymmetricPD(a), SymmetricPD(b), 0.0).matrix()(0, 0) ==
          Catch::Approx(1.0).margin(1e-9));
    CHECK(geodesic(SymmetricPD(a), SymmetricPD(b), 1.0).matrix()(0, 0) ==
          Catch::Approx(4.0).margin(1e-9));
    CHECK(geodesic(SymmetricPD(a), SymmetricPD(b), 0.5).matrix()(0, 0) ==
          Catch::Approx(2.25).margin(1e-9));
    CHECK_THROWS_AS(geodesic(SymmetricPD(a), SymmetricPD(b), 1.5), config_error);
  }
  SECTION("constant curve when A = B") {
    const Mat a = rng.spd(2);
    for (double t : {0.0, 0.3, 0.7, 1.0})
      CHECK((geodesic(SymmetricPD(a), SymmetricPD(a), t).matrix() - a).norm() < 1e-8);
  }
  SECTION("lift consistency S_t S_t^T = Sigma_t and curve length") {
    const Mat a = rng.spd(3), b = rng.spd(3);
    SymmetricPD spd_a(a), spd_b(b);
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const Mat st = horizontal_lift_geodesic(spd_a, spd_b, t);
      const Mat sig = geodesic(spd_a, spd_b, t).matrix();
      CHECK((st * st.transpose() - sig).norm() < 1e-9 * std::max(1.0, sig.norm()));
    }
    // discretized Frobenius length of the lift equals the Bures distance
    const int segments = 1000;
    double length = 0.0;
    Mat prev = horizontal_lift_geodesic(spd_a, spd_b, 0.0);
    for (int i = 1; i <= segments; ++i) {
      const Mat cur = horizontal_lift_geodesic(spd_a, spd_b, double(i) / segments);
      length += (cur - prev).norm();
      prev = cur;
    }
    const double bures = std::sqrt(bures_distance_sq(spd_a, spd_b));
    CHECK(length == Catch::Approx(bures).epsilon(1e-3));
  }
}

TEST_CASE("empirical_gaussian_fit") {
  SECTION("rejects too few particles") {
    CHECK_THROWS_AS(empirical_gaussian_fit(Mat::Zero(2, 2)), config_error);
  }
  SECTION("collapsed cloud flagged degenerate") {
    Mat cloud = Mat::Ones(10, 2);
    const auto fit = empirical_gaussian_fit(cloud);
    CHECK(fit.degenerate);
    CHECK((fit.mean - RowVec::Ones(2)).norm() < 1e-12);
    CHECK(fit.cov.matrix()(0, 0) == Catch::Approx(1e-10).margin(1e-12));
  }
  SECTION("standard normal cloud") {
    TestRng rng(61);
    const Mat cloud = rng.matrix(100000, 2);
    const auto fit = empirical_gaussian_fit(cloud);
    CHECK(fit.mean.norm() < 0.02);
    CHECK((fit.cov.matrix() - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.02);
    CHECK_FALSE(fit.degenerate);
  }
  SECTION("affine-transformed cloud") {
    TestRng rng(67);
    Mat s(2, 2);
    s << 1.0, 0.0, 0.5, 2.0;
    RowVec mu(2);
    mu << -1.0, 3.0;
    Mat cloud = rng.matrix(100000, 2) * s.transpose();
    cloud.rowwise() += mu;
    const auto fit = empirical_gaussian_fit(cloud);
    CHECK((fit.mean - mu).norm() < 0.05);
    CHECK((fit.cov.matrix() - s * s.transpose()).cwiseAbs().maxCoeff() < 0.08);
  }
}
