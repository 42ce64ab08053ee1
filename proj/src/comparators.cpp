#include "lvm/comparators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>

#include "lvm/numerics.hpp"

namespace lvm {

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

GlmFit logistic_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_iter,
                    double tol) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  GlmFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);

  Eigen::VectorXd mu(n), w(n);
  for (int it = 1; it <= max_iter; ++it) {
    fit.n_iter = it;
    const Eigen::VectorXd eta = x * fit.coef;
    for (int i = 0; i < n; ++i) {
      mu(i) = std::min(std::max(expit(eta(i)), 1e-10), 1.0 - 1e-10);
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
    const Eigen::VectorXd score = x.transpose() * (y - mu);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
    const Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) break;
    fit.coef += step;
    if (step.cwiseAbs().maxCoeff() < tol) {
      fit.converged = true;
      break;
    }
  }

  const Eigen::VectorXd eta = x * fit.coef;
  double dev = 0.0;
  for (int i = 0; i < n; ++i) {
    const double m = std::min(std::max(expit(eta(i)), 1e-12), 1.0 - 1e-12);
    dev += y(i) * std::log(m) + (1.0 - y(i)) * std::log(1.0 - m);
    w(i) = m * (1.0 - m);
  }
  fit.deviance = -2.0 * dev;
  fit.separation = !fit.converged && eta.cwiseAbs().maxCoeff() > 20.0;
  const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
  fit.cov = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  return fit;
}

EffectEstimate standard_binary_analysis(const Dataset& data, const ResponderRule& rule,
                                        double z_crit) {
  data.validate();
  rule.validate(data.k3);
  const int n = data.n();
  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = data.patients[i];
    x(i, 0) = 1.0;
    x(i, 1) = r.treat;
    x(i, 2) = r.y10;
    x(i, 3) = r.y20;
    y(i) = observed_response(r, rule);
  }
  const GlmFit fit = logistic_fit(x, y);

  EffectEstimate e;
  e.estimate = fit.coef(1);
  e.se = std::sqrt(std::max(fit.cov(1, 1), 0.0));
  e.ci_low = e.estimate - z_crit * e.se;
  e.ci_high = e.estimate + z_crit * e.se;
  e.p_value = (e.se > 0.0) ? 2.0 * norm_cdf(-std::fabs(e.estimate) / e.se) : 1.0;
  double s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double base = fit.coef(0) + fit.coef(2) * x(i, 2) + fit.coef(3) * x(i, 3);
    s0 += expit(base);
    s1 += expit(base + fit.coef(1));
  }
  e.p_control = s0 / n;
  e.p_treat = s1 / n;
  e.scale = EffectScale::odds_ratio;
  e.converged = fit.converged;
  if (fit.separation) e.note = "separation: diverging coefficients in the responder model";
  else if (!fit.converged) e.note = "responder model did not converge";
  return e;
}

namespace {

// Stacked parameter layout for the augmented analysis:
// [lin0..lin3, sigma, f0..f3] (the failure block is absent when degenerate).
struct AugbinModel {
  Eigen::VectorXd params;
  Eigen::MatrixXd cov;       // block diagonal
  bool f_degenerate = false;
  bool f_converged = true;
  bool f_separation = false;
  double theta_retained = 0.0;
  int retained = 1;
};

double augbin_patient_prob(const AugbinModel& m, int treat, double y10, double y20,
                           double quad_tol) {
  const auto& v = m.params;
  const double mu = v(0) + v(1) * treat + v(2) * y10 + v(3) * y20;
  const double sigma = v(4);
  const double pf0 =
      m.f_degenerate ? 1.0 : 1.0 - expit(v(5) + v(6) * treat + v(7) * y10 + v(8) * y20);
  const double zmax = (m.theta_retained - mu) / sigma;
  if (zmax <= -12.0) return 0.0;
  const double cap = std::min(zmax, 12.0);
  // failure-free probability integrated against the fitted outcome density
  const double integral =
      adaptive_simpson([&](double z) { return pf0 * norm_pdf(z); }, -12.0, cap, quad_tol);
  return std::min(1.0, std::max(0.0, integral));
}

}  // namespace

EffectEstimate augmented_binary_analysis(const Dataset& data, const ResponderRule& rule,
                                         const AugbinOptions& opts) {
  data.validate();
  rule.validate(data.k3);
  if (opts.retained_outcome != 1 && opts.retained_outcome != 2)
    throw std::invalid_argument("augmented_binary_analysis: retained outcome must be 1 or 2");
  const int n = data.n();
  const bool keep1 = opts.retained_outcome == 1;

  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd y_lin(n), f(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = data.patients[i];
    x(i, 0) = 1.0;
    x(i, 1) = r.treat;
    x(i, 2) = r.y10;
    x(i, 3) = r.y20;
    y_lin(i) = keep1 ? r.y1 : r.y2;
    const bool other_ok = keep1 ? (r.y2 <= rule.theta2) : (r.y1 <= rule.theta1);
    const bool ordinal_ok = r.y3 <= rule.w_max;
    const bool binary_ok = !rule.y4_responder_level || r.y4 == *rule.y4_responder_level;
    f(i) = (other_ok && ordinal_ok && binary_ok) ? 0.0 : 1.0;
  }

  AugbinModel m;
  m.retained = opts.retained_outcome;
  m.theta_retained = keep1 ? rule.theta1 : rule.theta2;

  const Eigen::VectorXd lin = x.colPivHouseholderQr().solve(y_lin);
  const double rss = (y_lin - x * lin).squaredNorm();
  const double sigma = std::sqrt(rss / n);
  const Eigen::MatrixXd xtx_inv =
      (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(4, 4));

  const double fsum = f.sum();
  m.f_degenerate = (fsum == 0.0 || fsum == n);
  GlmFit ffit;
  std::string note;
  if (!m.f_degenerate) {
    ffit = logistic_fit(x, f);
    m.f_converged = ffit.converged;
    m.f_separation = ffit.separation;
    if (ffit.separation) note = "separation: diverging coefficients in the failure model";
    else if (!ffit.converged) note = "failure model did not converge";
  } else {
    note = (fsum == 0.0)
               ? "failure indicator all zero; continuous-only response probability"
               : "failure indicator all one; continuous-only response probability";
  }

  const int np = m.f_degenerate ? 5 : 9;
  m.params = Eigen::VectorXd::Zero(np);
  m.params.head(4) = lin;
  m.params(4) = sigma;
  m.cov = Eigen::MatrixXd::Zero(np, np);
  m.cov.topLeftCorner(4, 4) = sigma * sigma * xtx_inv;
  m.cov(4, 4) = sigma * sigma / (2.0 * n);  // ML variance of the SD estimate
  if (!m.f_degenerate) {
    m.params.tail(4) = ffit.coef;
    m.cov.bottomRightCorner(4, 4) = ffit.cov;
  }

  auto arm_means = [&](const Eigen::VectorXd& v) {
    AugbinModel mm = m;
    mm.params = v;
    double s0 = 0.0, s1 = 0.0;
    for (const auto& r : data.patients) {
      s0 += augbin_patient_prob(mm, 0, r.y10, r.y20, opts.quad_tol);
      s1 += augbin_patient_prob(mm, 1, r.y10, r.y20, opts.quad_tol);
    }
    return std::pair<double, double>{s0 / n, s1 / n};
  };

  const auto [p0, p1] = arm_means(m.params);
  if (p0 <= 1e-12 || p0 >= 1.0 - 1e-12 || p1 <= 1e-12 || p1 >= 1.0 - 1e-12)
    throw DegenerateEstimate("augmented analysis: mean response probability is degenerate");
  auto log_or_of = [](double a, double b) {
    return std::log(b / (1.0 - b)) - std::log(a / (1.0 - a));
  };
  const double est = log_or_of(p0, p1);

  Eigen::VectorXd grad(np);
  Eigen::VectorXd v = m.params;
  for (int j = 0; j < np; ++j) {
    const double h = std::max(opts.fd_step, opts.fd_step * std::fabs(v(j)));
    const double orig = v(j);
    v(j) = orig + h;
    const auto [u0, u1] = arm_means(v);
    v(j) = orig - h;
    const auto [d0, d1] = arm_means(v);
    v(j) = orig;
    grad(j) = (log_or_of(u0, u1) - log_or_of(d0, d1)) / (2.0 * h);
  }
  const double var = grad.dot(m.cov * grad);

  EffectEstimate e;
  e.estimate = est;
  e.se = std::sqrt(std::max(var, 0.0));
  e.ci_low = est - opts.z_crit * e.se;
  e.ci_high = est + opts.z_crit * e.se;
  e.p_value = (e.se > 0.0) ? 2.0 * norm_cdf(-std::fabs(est) / e.se) : 1.0;
  e.p_control = p0;
  e.p_treat = p1;
  e.scale = EffectScale::odds_ratio;
  e.converged = m.f_converged && !m.f_separation;
  e.note = note;
  return e;
}

}  // namespace lvm
