#include "lvm/types.hpp"

#include <Eigen/Cholesky>

namespace lvm {

int Dataset::n_arm(int treat) const {
  int c = 0;
  for (const auto& p : patients) c += (p.treat == treat) ? 1 : 0;
  return c;
}

void Dataset::validate() const {
  if (k3 < 2) throw std::invalid_argument("dataset: k3 must be >= 2");
  if (patients.empty()) throw std::invalid_argument("dataset: no patients");
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const auto& r = patients[i];
    const std::string where = "patient " + (r.id.empty() ? std::to_string(i) : r.id);
    if (r.treat != 0 && r.treat != 1)
      throw std::invalid_argument(where + ": treat must be 0 or 1");
    if (r.y4 != 0 && r.y4 != 1)
      throw std::invalid_argument(where + ": y4 must be 0 or 1");
    if (r.y3 < 1 || r.y3 > k3)
      throw std::invalid_argument(where + ": y3 out of range 1.." + std::to_string(k3));
    for (double v : {r.y10, r.y20, r.y1, r.y2})
      if (!std::isfinite(v)) throw std::invalid_argument(where + ": non-finite value");
  }
}

void ResponderRule::validate(int k3) const {
  if (w_max < 1 || w_max > k3)
    throw std::invalid_argument("rule: w_max out of range 1.." + std::to_string(k3));
  if (!std::isfinite(theta1) || !std::isfinite(theta2))
    throw std::invalid_argument("rule: thresholds must be finite");
  if (y4_responder_level && *y4_responder_level != 0 && *y4_responder_level != 1)
    throw std::invalid_argument("rule: y4 responder level must be 0 or 1");
}

int observed_response(const PatientRecord& rec, const ResponderRule& rule) {
  if (rec.y1 > rule.theta1) return 0;
  if (rec.y2 > rule.theta2) return 0;
  if (rec.y3 > rule.w_max) return 0;
  if (rule.y4_responder_level && rec.y4 != *rule.y4_responder_level) return 0;
  return 1;
}

void LatentParams::validate() const {
  for (double v : {alpha0, alpha1, alpha2, beta0, beta1, beta2, gamma1, psi0, psi1})
    if (!std::isfinite(v)) throw std::invalid_argument("params: non-finite coefficient");
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0) || !std::isfinite(sigma1) || !std::isfinite(sigma2))
    throw std::invalid_argument("params: sigma must be positive and finite");
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(tau3[i])) throw std::invalid_argument("params: non-finite cut-point");
    if (i > 0 && !(tau3[i] > tau3[i - 1]))
      throw std::invalid_argument("params: cut-points must be strictly increasing");
  }
  for (double r : {rho12, rho13, rho14, rho23, rho24, rho34})
    if (!(std::fabs(r) < 1.0)) throw std::invalid_argument("params: correlations must lie in (-1,1)");
}

namespace {

// 2*expit(d)-1 == tanh(d/2); the clamps only act where doubles saturate,
// keeping the map total on finite vectors (|rho| strictly below 1,
// sigma strictly positive and finite).
double rho_to_delta(double rho) { return 2.0 * std::atanh(rho); }
double delta_to_rho(double d) {
  const double r = std::tanh(0.5 * d);
  return std::min(std::max(r, -(1.0 - 1e-15)), 1.0 - 1e-15);
}
double delta_to_sigma(double d) { return std::exp(std::min(std::max(d, -350.0), 350.0)); }
double increment(double d) { return std::exp(std::min(d, 700.0)); }

}  // namespace

UnconstrainedParams to_unconstrained(const LatentParams& p) {
  p.validate();
  UnconstrainedParams u;
  auto& v = u.v;
  v[uidx::alpha0] = p.alpha0;
  v[uidx::alpha1] = p.alpha1;
  v[uidx::alpha2] = p.alpha2;
  v[uidx::beta0] = p.beta0;
  v[uidx::beta1] = p.beta1;
  v[uidx::beta2] = p.beta2;
  v[uidx::gamma1] = p.gamma1;
  v[uidx::psi0] = p.psi0;
  v[uidx::psi1] = p.psi1;
  v[uidx::tau1] = p.tau3[0];
  v[uidx::ltau2] = std::log(p.tau3[1] - p.tau3[0]);
  v[uidx::ltau3] = std::log(p.tau3[2] - p.tau3[1]);
  v[uidx::ltau4] = std::log(p.tau3[3] - p.tau3[2]);
  v[uidx::d1] = std::log(p.sigma1);
  v[uidx::d2] = std::log(p.sigma2);
  v[uidx::d12] = rho_to_delta(p.rho12);
  v[uidx::d13] = rho_to_delta(p.rho13);
  v[uidx::d14] = rho_to_delta(p.rho14);
  v[uidx::d23] = rho_to_delta(p.rho23);
  v[uidx::d24] = rho_to_delta(p.rho24);
  v[uidx::d34] = rho_to_delta(p.rho34);
  return u;
}

LatentParams from_unconstrained(const UnconstrainedParams& u) {
  const auto& v = u.v;
  LatentParams p;
  p.alpha0 = v[uidx::alpha0];
  p.alpha1 = v[uidx::alpha1];
  p.alpha2 = v[uidx::alpha2];
  p.beta0 = v[uidx::beta0];
  p.beta1 = v[uidx::beta1];
  p.beta2 = v[uidx::beta2];
  p.gamma1 = v[uidx::gamma1];
  p.psi0 = v[uidx::psi0];
  p.psi1 = v[uidx::psi1];
  p.tau3[0] = v[uidx::tau1];
  p.tau3[1] = p.tau3[0] + increment(v[uidx::ltau2]);
  p.tau3[2] = p.tau3[1] + increment(v[uidx::ltau3]);
  p.tau3[3] = p.tau3[2] + increment(v[uidx::ltau4]);
  p.sigma1 = delta_to_sigma(v[uidx::d1]);
  p.sigma2 = delta_to_sigma(v[uidx::d2]);
  p.rho12 = delta_to_rho(v[uidx::d12]);
  p.rho13 = delta_to_rho(v[uidx::d13]);
  p.rho14 = delta_to_rho(v[uidx::d14]);
  p.rho23 = delta_to_rho(v[uidx::d23]);
  p.rho24 = delta_to_rho(v[uidx::d24]);
  p.rho34 = delta_to_rho(v[uidx::d34]);
  return p;
}

Eigen::Matrix4d sigma_matrix_unchecked(const LatentParams& p) {
  const double s1 = p.sigma1, s2 = p.sigma2;
  Eigen::Matrix4d m;
  m << s1 * s1, p.rho12 * s1 * s2, p.rho13 * s1, p.rho14 * s1,
       p.rho12 * s1 * s2, s2 * s2, p.rho23 * s2, p.rho24 * s2,
       p.rho13 * s1, p.rho23 * s2, 1.0, p.rho34,
       p.rho14 * s1, p.rho24 * s2, p.rho34, 1.0;
  return m;
}

Eigen::Matrix4d sigma_matrix(const LatentParams& p) {
  p.validate();
  Eigen::Matrix4d m = sigma_matrix_unchecked(p);
  Eigen::LLT<Eigen::Matrix4d> llt(m);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("sigma_matrix: correlation combination is not positive definite");
  return m;
}

}  // namespace lvm
