#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lvm/latent_model.hpp"
#include "lvm/numerics.hpp"
#include "lvm/rng.hpp"
#include "test_helpers.hpp"

using namespace lvm;

namespace {

// Independent three-part log-likelihood used by the factorization checks:
// bivariate normal for (y1,y2), ordered probit for y3, probit for y4.
double split_loglik(const LatentParams& p, const Dataset& data) {
  const double om = 1.0 - p.rho12 * p.rho12;
  double ll = 0.0;
  for (const auto& r : data.patients) {
    const Eigen::Vector4d mu = p.mean(r.treat, r.y10, r.y20);
    const double z1 = (r.y1 - mu(0)) / p.sigma1;
    const double z2 = (r.y2 - mu(1)) / p.sigma2;
    ll += -std::log(2.0 * M_PI * p.sigma1 * p.sigma2 * std::sqrt(om)) -
          (z1 * z1 - 2.0 * p.rho12 * z1 * z2 + z2 * z2) / (2.0 * om);
    const double lo = (r.y3 == 1) ? -kInf : p.tau3[r.y3 - 2];
    const double hi = (r.y3 == 5) ? kInf : p.tau3[r.y3 - 1];
    ll += std::log(norm_cdf(hi - mu(2)) - norm_cdf(lo - mu(2)));
    ll += std::log(r.y4 == 1 ? norm_cdf(mu(3)) : norm_cdf(-mu(3)));
  }
  return ll;
}

CondNormal standard_cond() {
  CondNormal c;
  c.mu.setZero();
  c.sigma.setIdentity();
  return c;
}

}  // namespace

TEST_CASE("cell probabilities partition the plane") {
  Rng rng(314);
  for (int rep = 0; rep < 60; ++rep) {
    const LatentParams p = testutil::random_valid_params(rng);
    CondNormal cond = conditional_34(p, rng.normal(), rng.normal(), 0.0, 0.0,
                                     0.6 * rng.normal(), 0.6 * rng.normal());
    if (!cond.usable()) continue;
    double total = 0.0;
    for (int w = 1; w <= 5; ++w)
      for (int k = 0; k <= 1; ++k) {
        const double c = cell_probability(p, w, k, cond);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
        total += c;
      }
    CHECK(std::fabs(total - 1.0) < 1e-10);
  }
}

TEST_CASE("cell probability factorizes for an independent conditional") {
  const LatentParams p = testutil::baseline_params();
  const double got = cell_probability(p, 1, 0, standard_cond());
  CHECK(got == doctest::Approx(norm_cdf(-1.0) * 0.5).epsilon(1e-12));
  // 0.158655 * 0.5, from the univariate CDF
  CHECK(got == doctest::Approx(0.15865525393146 * 0.5).epsilon(1e-9));
}

TEST_CASE("top-edge cell reproduces the two-term column pattern") {
  // w=3 with the binary level at its upper tail: the k-direction
  // marginalizes and the cell reduces to a difference of two CDF columns.
  const LatentParams p = testutil::baseline_params();
  CondNormal cond;
  cond.mu << 0.15, -0.3;
  cond.sigma << 0.81, 0.145, 0.145, 0.87;
  const double got = cell_probability(p, 3, 1, cond);
  const double s3 = std::sqrt(0.81), s4 = std::sqrt(0.87);
  const double r = 0.145 / (s3 * s4);
  const double want = (norm_cdf((p.tau3[2] - cond.mu(0)) / s3) -
                       phi2((p.tau3[2] - cond.mu(0)) / s3, (0.0 - cond.mu(1)) / s4, r)) -
                      (norm_cdf((p.tau3[1] - cond.mu(0)) / s3) -
                       phi2((p.tau3[1] - cond.mu(0)) / s3, (0.0 - cond.mu(1)) / s4, r));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("log-likelihood matches a hand-computed single patient") {
  const LatentParams p = testutil::baseline_params();
  Dataset d;
  PatientRecord r;
  r.treat = 0;
  r.y10 = 0.0;
  r.y20 = 0.0;
  r.y1 = -4.9;  // equals mu1
  r.y2 = -1.2;  // equals mu2
  r.y3 = 1;
  r.y4 = 0;
  d.patients.push_back(r);

  const double got = log_likelihood(to_unconstrained(p), d);

  // density at the mean, sigma1=sigma2=1, rho12=0.5
  const double density_term = std::log(1.0 / (2.0 * M_PI * std::sqrt(1.0 - 0.25)));
  // conditional covariance entries evaluated by hand from the correlations
  const double v3 = 0.81, v4 = 0.87, cv = 0.145;
  const double s3 = std::sqrt(v3), s4 = std::sqrt(v4);
  // centered continuous pair leaves the conditional mean at (0, psi0)
  const double cell_term =
      std::log(phi2((-1.0 - 0.0) / s3, (0.0 - (-0.2)) / s4, cv / (s3 * s4)));
  CHECK(got == doctest::Approx(density_term + cell_term).epsilon(1e-12));
}

TEST_CASE("log-likelihood decomposes under cross-block independence") {
  LatentParams p = testutil::baseline_params();
  p.rho13 = p.rho14 = p.rho23 = p.rho24 = p.rho34 = 0.0;
  const Dataset d = testutil::generate_from(p, 50, 2024);
  const double got = log_likelihood(to_unconstrained(p), d);
  const double want = split_loglik(p, d);
  CHECK(got == doctest::Approx(want).epsilon(1e-10));
  CHECK(std::fabs(got - want) < 1e-8);
}

TEST_CASE("log-likelihood is invariant to patient order") {
  const LatentParams p = testutil::baseline_params();
  Dataset d = testutil::generate_from(p, 40, 99);
  const double before = log_likelihood(to_unconstrained(p), d);
  std::reverse(d.patients.begin(), d.patients.end());
  std::swap(d.patients[3], d.patients[17]);
  const double after = log_likelihood(to_unconstrained(p), d);
  CHECK(before == doctest::Approx(after).epsilon(1e-13));
}

TEST_CASE("log-likelihood stays finite when cells underflow") {
  LatentParams p = testutil::baseline_params();
  Dataset d = testutil::generate_from(p, 10, 5);
  UnconstrainedParams u = to_unconstrained(p);
  u.v[uidx::tau1] = 40.0;  // pushes every observed cell into the far tail
  LogLikDiag diag;
  const double ll = log_likelihood(u, d, &diag);
  CHECK(std::isfinite(ll));
  CHECK(diag.floored);
  CHECK(ll < -1000.0);
}

TEST_CASE("finite-difference gradient is step-size stable") {
  const LatentParams p = testutil::baseline_params();
  const Dataset d = testutil::generate_from(p, 60, 7);
  ScalarFn f = [&](const Eigen::VectorXd& v) {
    UnconstrainedParams u;
    u.v = v;
    return log_likelihood(u, d);
  };
  const Eigen::VectorXd x = to_unconstrained(p).v;
  const Eigen::VectorXd g1 = num_gradient(f, x, 1e-5);
  const Eigen::VectorXd g2 = num_gradient(f, x, 1e-4);
  for (int i = 0; i < x.size(); ++i) {
    const double scale = std::max(std::fabs(g1(i)), 1.0);
    CHECK(std::fabs(g1(i) - g2(i)) / scale < 1e-4);
  }
}

TEST_CASE("fit guards degenerate input") {
  const LatentParams p = testutil::baseline_params();
  SUBCASE("single arm") {
    Dataset d = testutil::generate_from(p, 60, 3);
    for (auto& r : d.patients) r.treat = 0;
    CHECK_THROWS_AS(fit(d), std::invalid_argument);
  }
  SUBCASE("too few patients") {
    const Dataset d = testutil::generate_from(p, 20, 3);
    CHECK_THROWS_AS(fit(d), std::invalid_argument);
  }
}

TEST_CASE("fit recovers generating parameters" * doctest::timeout(300)) {
  const LatentParams truth = testutil::baseline_params();
  const Dataset d = testutil::generate_from(truth, 700, 20240801);
  const FitResult res = fit(d);
  REQUIRE(res.converged);

  // MLE beats the generating parameters on the fitting data
  const double ll_truth = log_likelihood(to_unconstrained(truth), d);
  CHECK(res.loglik >= ll_truth - 1e-6);

  const Eigen::VectorXd u_true = to_unconstrained(truth).v;
  const Eigen::VectorXd se = res.cov_unconstrained.diagonal().cwiseMax(0.0).cwiseSqrt();
  // headline parameters within 5 model SEs at this sample size
  for (int idx : {uidx::alpha0, uidx::alpha1, uidx::beta0, uidx::beta1, uidx::gamma1,
                  uidx::psi0, uidx::tau1, uidx::d1, uidx::d12}) {
    REQUIRE(se(idx) > 0.0);
    CHECK(std::fabs(res.unconstrained.v(idx) - u_true(idx)) < 5.0 * se(idx));
  }
  CHECK(!res.hessian_repaired);
}
