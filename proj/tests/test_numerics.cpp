#include <doctest.h>

#include <cmath>

#include "lvm/numerics.hpp"
#include "lvm/rng.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace lvm;

TEST_CASE("normal cdf and quantile round trip") {
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-9}) {
    const double z = norm_quantile(p);
    CHECK(norm_cdf(z) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(norm_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
}

TEST_CASE("phi2 basic values") {
  CHECK(phi2(0.0, 0.0, 0.0) == doctest::Approx(0.25).epsilon(1e-13));
  // classical identity: P = 1/4 + asin(r)/(2*pi)
  CHECK(phi2(0.0, 0.0, 0.5) == doctest::Approx(0.25 + std::asin(0.5) / (2.0 * M_PI)).epsilon(1e-12));
  CHECK(phi2(0.0, 0.0, 0.5) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // marginalization at +inf
  for (double r : {-0.8, 0.0, 0.6}) {
    CHECK(phi2(kInf, 0.7, r) == doctest::Approx(norm_cdf(0.7)).epsilon(1e-14));
    CHECK(phi2(-0.3, kInf, r) == doctest::Approx(norm_cdf(-0.3)).epsilon(1e-14));
  }
  CHECK(phi2(-kInf, 0.5, 0.3) == 0.0);
  CHECK_THROWS_AS(phi2(0.0, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("phi2 against density quadrature oracle") {
  for (double r : {-0.95, -0.6, -0.2, 0.0, 0.35, 0.75, 0.95}) {
    for (double b1 : {-2.0, -0.5, 1.0}) {
      for (double b2 : {-1.5, 0.0, 2.5}) {
        const double got = phi2(b1, b2, r);
        const double want = oracles::phi2_quadrature(b1, b2, r);
        CHECK(std::fabs(got - want) <= 1e-9);
      }
    }
  }
}

TEST_CASE("phi2 factorizes as r -> 0 and is monotone") {
  CHECK(std::fabs(phi2(0.7, -0.4, 0.0) - norm_cdf(0.7) * norm_cdf(-0.4)) < 1e-10);
  double prev = 0.0;
  for (double b = -3.0; b <= 3.0; b += 0.5) {
    const double v = phi2(b, 0.4, 0.3);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("phi4 exact corners") {
  const Eigen::Vector4d mu = Eigen::Vector4d::Zero();
  const Eigen::Matrix4d id = Eigen::Matrix4d::Identity();
  const auto quarter = phi4(Eigen::Vector4d::Zero(), mu, id);
  CHECK(quarter.value == doctest::Approx(0.0625).epsilon(2e-5));
  const auto one = phi4(Eigen::Vector4d::Constant(kInf), mu, id);
  CHECK(one.value == 1.0);
  CHECK(one.error == 0.0);
  Eigen::Vector4d up(0.3, kInf, kInf, kInf);
  CHECK(phi4(up, mu, id).value == doctest::Approx(norm_cdf(0.3)).epsilon(1e-12));
}

TEST_CASE("phi4 against plain Monte Carlo oracle") {
  const auto p = testutil::baseline_params();
  const Eigen::Matrix4d sigma = sigma_matrix(p);
  const Eigen::Vector4d mu = p.mean(0, 0.0, 0.0);
  const Eigen::Vector4d upper(-4.0, -0.6, 0.45, 0.0);
  QmcOptions opts;
  const auto est = phi4(upper, mu, sigma, opts);
  CHECK(est.error <= 1e-6);
  const auto mc = oracles::mvn_cdf_mc(upper, mu, sigma, 2'000'000, 99);
  CHECK(std::fabs(est.value - mc.value) <= 3.0 * mc.se + est.error);
}

TEST_CASE("phi4 deterministic given seed") {
  const auto p = testutil::baseline_params();
  const Eigen::Matrix4d sigma = sigma_matrix(p);
  const Eigen::Vector4d mu = p.mean(1, 0.0, 0.0);
  const Eigen::Vector4d upper(-4.0, -0.6, 0.45, 0.0);
  QmcOptions opts;
  opts.points = 2000;
  const auto a = phi4(upper, mu, sigma, opts);
  const auto b = phi4(upper, mu, sigma, opts);
  CHECK(a.value == b.value);
  opts.seed += 1;
  const auto c = phi4(upper, mu, sigma, opts);
  CHECK(a.value != c.value);
  CHECK(std::fabs(a.value - c.value) < 1e-4);
}

TEST_CASE("phi4 block diagonal factorizes into phi2 pair") {
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Identity();
  sigma(0, 1) = sigma(1, 0) = 0.6;
  sigma(2, 3) = sigma(3, 2) = -0.4;
  const Eigen::Vector4d mu(0.2, -0.1, 0.4, 0.0);
  const Eigen::Vector4d upper(1.0, 0.3, -0.2, 0.8);
  QmcOptions opts;
  opts.points = 5000;
  const auto est = phi4(upper, mu, sigma, opts);
  const double want = phi2(upper(0) - mu(0), upper(1) - mu(1), 0.6) *
                      phi2(upper(2) - mu(2), upper(3) - mu(3), -0.4);
  CHECK(std::fabs(est.value - want) <= std::max(3.0 * est.error, 1e-6));
}

TEST_CASE("phi4 rejects non-PD covariance") {
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Identity();
  sigma(0, 1) = sigma(1, 0) = 0.99;
  sigma(0, 2) = sigma(2, 0) = 0.99;
  sigma(1, 2) = sigma(2, 1) = -0.99;
  CHECK_THROWS_AS(phi4(Eigen::Vector4d::Zero(), Eigen::Vector4d::Zero(), sigma, {}),
                  NotPositiveDefinite);
}

TEST_CASE("conditional_34 special cases") {
  auto p = testutil::baseline_params();

  SUBCASE("independence") {
    p.rho12 = p.rho13 = p.rho14 = p.rho23 = p.rho24 = p.rho34 = 0.0;
    const auto c = conditional_34(p, 1.7, -2.0, 0.0, 0.0, 0.3, -0.4);
    CHECK(c.mu(0) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(c.mu(1) == doctest::Approx(-0.4).epsilon(1e-14));
    CHECK(c.sigma.isApprox(Eigen::Matrix2d::Identity(), 1e-14));
  }

  SUBCASE("conditioning at the mean leaves the location unchanged") {
    const auto c = conditional_34(p, -4.9, -1.2, -4.9, -1.2, 0.1, -0.2);
    CHECK(c.mu(0) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(c.mu(1) == doctest::Approx(-0.2).epsilon(1e-14));
  }

  SUBCASE("hand-evaluated slope") {
    // unit offset in y1 with baseline correlations: (0.35 - 0.5*0.4) / (1 * 0.75)
    const auto c = conditional_34(p, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    CHECK(c.mu(0) == doctest::Approx(0.2).epsilon(1e-13));
  }
}

TEST_CASE("conditional_34 agrees with generic Schur oracle") {
  Rng rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = testutil::random_valid_params(rng);
    const Eigen::Matrix4d sigma = sigma_matrix(p);
    const double y10 = rng.normal(), y20 = rng.normal();
    const Eigen::Vector4d mu = p.mean(rep % 2, y10, y20);
    const double y1 = mu(0) + p.sigma1 * rng.normal();
    const double y2 = mu(1) + p.sigma2 * rng.normal();

    const auto got = conditional_34(p, y1, y2, mu(0), mu(1), mu(2), mu(3));
    Eigen::VectorXd obs(2);
    obs << y1, y2;
    const auto want = oracles::conditional_schur(mu, sigma, {2, 3}, {0, 1}, obs);
    CHECK(std::fabs(got.mu(0) - want.mu(0)) < 1e-12);
    CHECK(std::fabs(got.mu(1) - want.mu(1)) < 1e-12);
    CHECK((got.sigma - want.sigma).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cholesky reports non-PD") {
  Eigen::MatrixXd ok(2, 2);
  ok << 2.0, 0.5, 0.5, 1.0;
  REQUIRE(cholesky(ok).has_value());
  const Eigen::MatrixXd l = *cholesky(ok);
  CHECK((l * l.transpose() - ok).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK(!cholesky(bad).has_value());
}

TEST_CASE("nearest_pd") {
  SUBCASE("idempotent on PD input") {
    Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
    CHECK(nearest_pd(id).isApprox(id, 1e-15));
  }
  SUBCASE("clips a tiny negative eigenvalue") {
    Eigen::MatrixXd m = Eigen::Vector2d(1.0, -1e-12).asDiagonal();
    const Eigen::MatrixXd r = nearest_pd(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
    CHECK(es.eigenvalues().minCoeff() >= 0.5e-8);
    CHECK(std::fabs(r(0, 0) - 1.0) < 1e-12);
  }
  SUBCASE("repairs an indefinite matrix and beats diagonal truncation") {
    Eigen::MatrixXd m(3, 3);
    m << 1.0, 0.9, 0.2,
         0.9, 1.0, 0.9,
         0.2, 0.9, 1.0;  // indefinite: strong off-diagonal band
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es0(m);
    REQUIRE(es0.eigenvalues().minCoeff() < 0.0);
    const Eigen::MatrixXd r = nearest_pd(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
    CHECK(es.eigenvalues().minCoeff() >= 0.5e-8);
    // eigenvalue clipping distance, computed independently
    double clip_dist2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double ev = es0.eigenvalues()(i);
      if (ev < 1e-8) clip_dist2 += (ev - 1e-8) * (ev - 1e-8);
    }
    const double got_dist = (r - m).norm();
    CHECK(got_dist <= std::sqrt(clip_dist2) + 1e-10);
    const double diag_dist = (Eigen::MatrixXd(m.diagonal().asDiagonal()) - m).norm();
    CHECK(got_dist < diag_dist);
  }
  SUBCASE("rejects asymmetric input") {
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(nearest_pd(m), std::invalid_argument);
  }
}

TEST_CASE("numerical derivatives") {
  Eigen::MatrixXd a(3, 3);
  a << 4.0, 1.0, 0.5,
       1.0, 3.0, -0.2,
       0.5, -0.2, 2.0;
  ScalarFn quad = [&](const Eigen::VectorXd& x) { return 0.5 * x.dot(a * x); };
  Eigen::VectorXd x0(3);
  x0 << 0.3, -1.2, 0.7;

  const Eigen::VectorXd g = num_gradient(quad, x0);
  CHECK((g - a * x0).cwiseAbs().maxCoeff() < 1e-6);

  const Eigen::MatrixXd h = num_hessian(quad, x0);
  CHECK(((h - a).cwiseAbs().array() / a.cwiseAbs().array().max(1.0)).maxCoeff() < 1e-4);
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);

  ScalarFn sum = [](const Eigen::VectorXd& x) { return x.sum(); };
  const Eigen::VectorXd gs = num_gradient(sum, x0);
  CHECK((gs - Eigen::VectorXd::Ones(3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("minimize") {
  SUBCASE("rosenbrock") {
    ScalarFn rosen = [](const Eigen::VectorXd& x) {
      const double a = 1.0 - x(0);
      const double b = x(1) - x(0) * x(0);
      return a * a + 100.0 * b * b;
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    const auto res = minimize(rosen, x0);
    CHECK(res.converged);
    CHECK(std::fabs(res.x(0) - 1.0) < 1e-6);
    CHECK(std::fabs(res.x(1) - 1.0) < 1e-6);
  }
  SUBCASE("convex quadratic hits the exact minimizer") {
    Eigen::MatrixXd a(2, 2);
    a << 3.0, 0.4, 0.4, 1.5;
    Eigen::VectorXd b(2);
    b << 1.0, -2.0;
    ScalarFn f = [&](const Eigen::VectorXd& x) { return 0.5 * x.dot(a * x) - b.dot(x); };
    const auto res = minimize(f, Eigen::VectorXd::Zero(2));
    CHECK(res.converged);
    const Eigen::VectorXd want = a.ldlt().solve(b);
    CHECK((res.x - want).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("iteration cap returns converged=false without throwing") {
    ScalarFn drift = [](const Eigen::VectorXd& x) { return -x(0); };
    MinimizeOptions opts;
    opts.max_iter = 20;
    const auto res = minimize(drift, Eigen::VectorXd::Zero(1), opts);
    CHECK(!res.converged);
    CHECK(res.n_iter == 20);
  }
}

TEST_CASE("adaptive simpson") {
  const double got = adaptive_simpson([](double x) { return std::exp(-x * x); }, 0.0, 2.0, 1e-12);
  CHECK(got == doctest::Approx(0.8820813907624215).epsilon(1e-10));  // sqrt(pi)/2 * erf(2)
}
