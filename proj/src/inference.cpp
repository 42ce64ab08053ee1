#include "lvm/inference.hpp"

#include <cmath>
#include <vector>

#include "lvm/rng.hpp"

namespace lvm {

namespace {

constexpr int kOrdinalLevels = 5;

// Response region as upper bounds on (Y1, Y2, Y3*, Y4*), with the fourth
// coordinate reflected when the responder level is 1 so that the region is
// always a lower-orthant rectangle.
struct ResponseRegion {
  Eigen::Vector4d upper;
  bool flip4 = false;
};

ResponseRegion response_region(const LatentParams& p, const ResponderRule& rule) {
  rule.validate(kOrdinalLevels);
  ResponseRegion r;
  r.upper(0) = rule.theta1;
  r.upper(1) = rule.theta2;
  r.upper(2) = (rule.w_max >= kOrdinalLevels) ? kInf : p.tau3[rule.w_max - 1];
  if (!rule.y4_responder_level) {
    r.upper(3) = kInf;
  } else {
    r.upper(3) = 0.0;
    r.flip4 = (*rule.y4_responder_level == 1);
  }
  return r;
}

Eigen::Matrix4d flipped_sigma(Eigen::Matrix4d sigma, bool flip4) {
  if (flip4) {
    for (int i = 0; i < 3; ++i) {
      sigma(3, i) = -sigma(3, i);
      sigma(i, 3) = -sigma(i, 3);
    }
  }
  return sigma;
}

Eigen::Vector4d flipped_mean(Eigen::Vector4d mu, bool flip4) {
  if (flip4) mu(3) = -mu(3);
  return mu;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

double response_prob(const LatentParams& p, int treat, double y10, double y20,
                     const ResponderRule& rule, const QmcOptions& opts) {
  const ResponseRegion region = response_region(p, rule);
  const Eigen::Matrix4d sigma = flipped_sigma(sigma_matrix(p), region.flip4);
  const Eigen::Vector4d mu = flipped_mean(p.mean(treat, y10, y20), region.flip4);
  return clamp01(mvn_cdf(region.upper, mu, sigma, opts).value);
}

Eigen::MatrixXd response_prob_batch(const LatentParams& p, const Dataset& data,
                                    const ResponderRule& rule, const QmcOptions& opts) {
  const int n = data.n();
  const ResponseRegion region = response_region(p, rule);
  const Eigen::Matrix4d sigma = flipped_sigma(sigma_matrix(p), region.flip4);

  std::vector<int> keep;
  for (int i = 0; i < 4; ++i)
    if (region.upper(i) != kInf) keep.push_back(i);
  const int m = static_cast<int>(keep.size());

  Eigen::MatrixXd probs(n, 2);
  if (m == 0) {
    probs.setOnes();
    return probs;
  }

  Eigen::MatrixXd sub_sigma(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) sub_sigma(a, b) = sigma(keep[a], keep[b]);

  // per-patient bounds b = upper - mu, plus their mean as ordering reference
  Eigen::MatrixXd bounds(2 * n, m);
  for (int i = 0; i < n; ++i) {
    const auto& rec = data.patients[i];
    for (int t = 0; t < 2; ++t) {
      const Eigen::Vector4d mu = flipped_mean(p.mean(t, rec.y10, rec.y20), region.flip4);
      for (int a = 0; a < m; ++a) bounds(2 * i + t, a) = region.upper(keep[a]) - mu(keep[a]);
    }
  }
  const CdfPlan plan = make_cdf_plan(sub_sigma, bounds.colwise().mean());

  QmcOptions per_patient = opts;
  for (int i = 0; i < n; ++i) {
    per_patient.seed = mix_seed(opts.seed, static_cast<std::uint64_t>(i));
    for (int t = 0; t < 2; ++t)
      probs(i, t) = clamp01(cdf_with_plan(plan, bounds.row(2 * i + t), per_patient).value);
  }
  return probs;
}

namespace {

struct ArmMeans {
  double p0 = 0.0;
  double p1 = 0.0;
};

ArmMeans arm_means(const UnconstrainedParams& u, const Dataset& data, const ResponderRule& rule,
                   const QmcOptions& opts) {
  const Eigen::MatrixXd probs = response_prob_batch(from_unconstrained(u), data, rule, opts);
  return {probs.col(0).mean(), probs.col(1).mean()};
}

double log_odds(double p, const char* arm) {
  if (p <= 1e-12 || p >= 1.0 - 1e-12)
    throw DegenerateEstimate(std::string("mean response probability in the ") + arm +
                             " arm is degenerate");
  return std::log(p / (1.0 - p));
}

double log_or_of(const ArmMeans& m) {
  return log_odds(m.p1, "treated") - log_odds(m.p0, "control");
}

// One central-differences sweep supplies the gradients of every scale.
struct EffectGradients {
  Eigen::VectorXd log_or, rd, rr;
};

EffectGradients effect_gradients(const FitResult& fit, const Dataset& data,
                                 const ResponderRule& rule, const EffectOptions& opts) {
  const int np = static_cast<int>(fit.unconstrained.v.size());
  EffectGradients g{Eigen::VectorXd(np), Eigen::VectorXd(np), Eigen::VectorXd(np)};
  UnconstrainedParams u = fit.unconstrained;
  for (int j = 0; j < np; ++j) {
    const double h = std::max(opts.fd_step, opts.fd_step * std::fabs(u.v(j)));
    const double orig = u.v(j);
    u.v(j) = orig + h;
    const ArmMeans up = arm_means(u, data, rule, opts.grad_qmc);
    u.v(j) = orig - h;
    const ArmMeans dn = arm_means(u, data, rule, opts.grad_qmc);
    u.v(j) = orig;
    g.log_or(j) = (log_or_of(up) - log_or_of(dn)) / (2.0 * h);
    g.rd(j) = ((up.p1 - up.p0) - (dn.p1 - dn.p0)) / (2.0 * h);
    g.rr(j) = (up.p1 / up.p0 - dn.p1 / dn.p0) / (2.0 * h);
  }
  return g;
}

EffectEstimate wald(double est, double var, double null_value, EffectScale scale,
                    const FitResult& fit, const ArmMeans& m, double z_crit) {
  EffectEstimate e;
  e.estimate = est;
  e.se = std::sqrt(std::max(var, 0.0));
  e.ci_low = est - z_crit * e.se;
  e.ci_high = est + z_crit * e.se;
  if (e.se > 0.0)
    e.p_value = 2.0 * norm_cdf(-std::fabs(est - null_value) / e.se);
  else
    e.p_value = (est == null_value) ? 1.0 : 0.0;
  e.p_treat = m.p1;
  e.p_control = m.p0;
  e.scale = scale;
  e.converged = fit.converged;
  if (!fit.converged) e.note = "latent fit did not converge";
  return e;
}

}  // namespace

EffectEstimate odds_ratio_effect(const FitResult& fit, const Dataset& data,
                                 const ResponderRule& rule, const EffectOptions& opts) {
  const ArmMeans m = arm_means(fit.unconstrained, data, rule, opts.point_qmc);
  const double est = log_or_of(m);
  const EffectGradients g = effect_gradients(fit, data, rule, opts);
  const double var = g.log_or.dot(fit.cov_unconstrained * g.log_or);
  return wald(est, var, 0.0, EffectScale::odds_ratio, fit, m, opts.z_crit);
}

RiskEffects risk_effects(const FitResult& fit, const Dataset& data, const ResponderRule& rule,
                         const EffectOptions& opts) {
  const ArmMeans m = arm_means(fit.unconstrained, data, rule, opts.point_qmc);
  if (m.p0 <= 1e-12)
    throw DegenerateEstimate("mean response probability in the control arm is degenerate");
  const EffectGradients g = effect_gradients(fit, data, rule, opts);
  RiskEffects out;
  out.difference = wald(m.p1 - m.p0, g.rd.dot(fit.cov_unconstrained * g.rd), 0.0,
                        EffectScale::risk_difference, fit, m, opts.z_crit);
  out.ratio = wald(m.p1 / m.p0, g.rr.dot(fit.cov_unconstrained * g.rr), 1.0,
                   EffectScale::risk_ratio, fit, m, opts.z_crit);
  return out;
}

}  // namespace lvm
