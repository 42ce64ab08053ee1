#include "lvm/latent_model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>

#include "lvm/rng.hpp"

namespace lvm {

namespace {
constexpr double kCellFloor = 1e-300;
constexpr int kOrdinalLevels = 5;
}  // namespace

double cell_probability(const LatentParams& p, int w, int k, const CondNormal& cond) {
  const double lo3 = (w <= 1) ? -kInf : p.tau3[w - 2];
  const double hi3 = (w >= kOrdinalLevels) ? kInf : p.tau3[w - 1];
  const double lo4 = (k <= 0) ? -kInf : 0.0;
  const double hi4 = (k >= 1) ? kInf : 0.0;

  const double s3 = std::sqrt(cond.sigma(0, 0));
  const double s4 = std::sqrt(cond.sigma(1, 1));
  const double r = cond.sigma(0, 1) / (s3 * s4);

  auto cdf = [&](double b3, double b4) {
    if (b3 == -kInf || b4 == -kInf) return 0.0;
    if (b3 == kInf && b4 == kInf) return 1.0;
    if (b3 == kInf) return norm_cdf((b4 - cond.mu(1)) / s4);
    if (b4 == kInf) return norm_cdf((b3 - cond.mu(0)) / s3);
    return phi2((b3 - cond.mu(0)) / s3, (b4 - cond.mu(1)) / s4, r);
  };

  const double v = cdf(hi3, hi4) - cdf(lo3, hi4) - cdf(hi3, lo4) + cdf(lo3, lo4);
  return std::min(1.0, std::max(0.0, v));
}

double log_likelihood(const UnconstrainedParams& u, const Dataset& data, LogLikDiag* diag) {
  if (data.k3 != kOrdinalLevels)
    throw std::invalid_argument("log_likelihood: model is defined for a 5-level ordinal");
  const LatentParams p = from_unconstrained(u);

  const double s1 = p.sigma1, s2 = p.sigma2, r12 = p.rho12;
  const double om = 1.0 - r12 * r12;
  const double log_norm = std::log(2.0 * M_PI * s1 * s2 * std::sqrt(om));

  const CondCoefs cc = conditional_coefs(p);
  CondNormal cond;
  cond.sigma = cc.sigma;
  // The transform keeps every |rho| < 1 but not joint feasibility; an
  // unusable conditional covariance floors every cell instead of producing NaN.
  const bool cond_ok = cond.sigma(0, 0) > 1e-12 && cond.sigma(1, 1) > 1e-12 &&
                       cond.sigma(0, 1) * cond.sigma(0, 1) <
                           (1.0 - 1e-12) * cond.sigma(0, 0) * cond.sigma(1, 1);

  const double log_floor = std::log(kCellFloor);
  bool floored = false;
  double ll = 0.0;
  for (const auto& rec : data.patients) {
    const Eigen::Vector4d mu = p.mean(rec.treat, rec.y10, rec.y20);
    const double z1 = (rec.y1 - mu(0)) / s1;
    const double z2 = (rec.y2 - mu(1)) / s2;
    ll += -log_norm - (z1 * z1 - 2.0 * r12 * z1 * z2 + z2 * z2) / (2.0 * om);
    if (!cond_ok) {
      ll += log_floor;
      floored = true;
      continue;
    }
    cond.mu << mu(2) + cc.c31 * (rec.y1 - mu(0)) + cc.c32 * (rec.y2 - mu(1)),
               mu(3) + cc.c41 * (rec.y1 - mu(0)) + cc.c42 * (rec.y2 - mu(1));
    double cell = cell_probability(p, rec.y3, rec.y4, cond);
    if (cell < kCellFloor) {
      cell = kCellFloor;
      floored = true;
    }
    ll += std::log(cell);
  }
  if (diag) {
    diag->floored = floored;
    diag->invalid_cond = !cond_ok;
  }
  return ll;
}

namespace {

// Least squares of y on [1, T, baseline]; returns coefficients and the ML
// residual standard deviation.
struct OlsFit {
  Eigen::Vector3d coef;
  double sd;
};

OlsFit ols_start(const Dataset& data, bool first_outcome) {
  const int n = data.n();
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = data.patients[i];
    x(i, 0) = 1.0;
    x(i, 1) = r.treat;
    x(i, 2) = first_outcome ? r.y10 : r.y20;
    y(i) = first_outcome ? r.y1 : r.y2;
  }
  OlsFit f;
  f.coef = x.colPivHouseholderQr().solve(y);
  const double rss = (y - x * f.coef).squaredNorm();
  f.sd = std::max(std::sqrt(rss / n), 1e-3);
  return f;
}

// Independent ordered probit of y3 on treatment, cut-points kept ordered
// through the same log-increment parameterization as the joint model.
void ordered_probit_start(const Dataset& data, double* gamma1, std::array<double, 4>* tau) {
  const int n = data.n();
  // pooled cumulative frequencies as cut-point starts
  std::array<double, 4> cum = {0, 0, 0, 0};
  for (const auto& r : data.patients)
    for (int w = r.y3; w <= 4; ++w) cum[w - 1] += 1.0;
  std::array<double, 4> t0;
  double prev = -kInf;
  for (int w = 0; w < 4; ++w) {
    double c = std::min(std::max(cum[w] / n, 0.002), 0.998);
    double t = norm_quantile(c);
    if (t < prev + 0.01) t = prev + 0.01;
    t0[w] = t;
    prev = t;
  }

  ScalarFn nll = [&](const Eigen::VectorXd& v) {
    const double g1 = v(0);
    std::array<double, 6> cuts;
    cuts[0] = -kInf;
    cuts[1] = v(1);
    for (int j = 2; j <= 4; ++j) cuts[j] = cuts[j - 1] + std::exp(v(j));
    cuts[5] = kInf;
    double ll = 0.0;
    for (const auto& r : data.patients) {
      const double mu3 = g1 * r.treat;
      const double pr = norm_cdf(cuts[r.y3] - mu3) - norm_cdf(cuts[r.y3 - 1] - mu3);
      ll += std::log(std::max(pr, 1e-12));
    }
    return -ll;
  };

  Eigen::VectorXd v0(5);
  v0 << 0.0, t0[0], std::log(t0[1] - t0[0]), std::log(t0[2] - t0[1]), std::log(t0[3] - t0[2]);
  MinimizeOptions mopts;
  mopts.max_iter = 200;
  const auto res = minimize(nll, v0, mopts);
  const Eigen::VectorXd& v = res.converged || res.f < nll(v0) ? res.x : v0;
  *gamma1 = v(0);
  (*tau)[0] = v(1);
  for (int j = 1; j < 4; ++j) (*tau)[j] = (*tau)[j - 1] + std::exp(v(j + 1));
}

// Saturated probit of y4 on treatment has a closed-form solution.
void probit_start(const Dataset& data, double* psi0, double* psi1) {
  double n_arm[2] = {0, 0}, ones[2] = {0, 0};
  for (const auto& r : data.patients) {
    n_arm[r.treat] += 1.0;
    ones[r.treat] += r.y4;
  }
  double z[2];
  for (int t = 0; t < 2; ++t) {
    const double lo = 0.5 / std::max(n_arm[t], 1.0);
    z[t] = norm_quantile(std::min(std::max(ones[t] / std::max(n_arm[t], 1.0), lo), 1.0 - lo));
  }
  *psi0 = z[0];
  *psi1 = z[1] - z[0];
}

}  // namespace

UnconstrainedParams starting_values(const Dataset& data) {
  LatentParams p;
  const OlsFit f1 = ols_start(data, true);
  const OlsFit f2 = ols_start(data, false);
  p.alpha0 = f1.coef(0); p.alpha1 = f1.coef(1); p.alpha2 = f1.coef(2);
  p.beta0 = f2.coef(0);  p.beta1 = f2.coef(1);  p.beta2 = f2.coef(2);
  p.sigma1 = f1.sd;
  p.sigma2 = f2.sd;
  ordered_probit_start(data, &p.gamma1, &p.tau3);
  probit_start(data, &p.psi0, &p.psi1);
  // correlations start at zero (delta = 0)
  return to_unconstrained(p);
}

FitResult fit(const Dataset& data, const FitOptions& opts) {
  data.validate();
  if (data.k3 != kOrdinalLevels)
    throw std::invalid_argument("fit: model is defined for a 5-level ordinal");
  if (data.n() < opts.min_patients)
    throw std::invalid_argument("fit: need at least " + std::to_string(opts.min_patients) +
                                " complete-case patients, got " + std::to_string(data.n()));
  if (data.n_arm(0) == 0 || data.n_arm(1) == 0)
    throw std::invalid_argument("fit: both treatment arms must be present");

  const UnconstrainedParams u0 = starting_values(data);
  ScalarFn nll = [&](const Eigen::VectorXd& v) {
    UnconstrainedParams u;
    u.v = v;
    return -log_likelihood(u, data);
  };

  MinimizeResult res = minimize(nll, u0.v, opts.minimize);
  if (!res.converged) {
    Rng rng(opts.seed);
    Eigen::VectorXd x1 = u0.v;
    for (int i = 0; i < x1.size(); ++i) x1(i) += 0.1 * rng.uniform();
    const MinimizeResult res2 = minimize(nll, x1, opts.minimize);
    if ((res2.converged && !res.converged) || res2.f < res.f) res = res2;
  }

  FitResult out;
  out.unconstrained.v = res.x;
  out.params = from_unconstrained(out.unconstrained);
  out.loglik = -res.f;
  out.converged = res.converged;
  out.n_iter = res.n_iter;

  LogLikDiag diag;
  log_likelihood(out.unconstrained, data, &diag);
  out.underflow_at_optimum = diag.floored;

  Eigen::MatrixXd hess = num_hessian(nll, res.x, 1e-5);
  auto lower = cholesky(hess);
  if (!lower) {
    hess = nearest_pd(hess);
    lower = cholesky(hess);
    out.hessian_repaired = true;
  }
  const int np = static_cast<int>(res.x.size());
  Eigen::MatrixXd cov;
  if (lower) {
    const Eigen::LLT<Eigen::MatrixXd> llt(hess);
    cov = llt.solve(Eigen::MatrixXd::Identity(np, np));
  } else {
    // nearest-PD repair was not enough; fall back to a pseudo-inverse
    cov = hess.completeOrthogonalDecomposition().pseudoInverse();
    out.hessian_repaired = true;
  }
  out.cov_unconstrained = 0.5 * (cov + cov.transpose());
  return out;
}

}  // namespace lvm
