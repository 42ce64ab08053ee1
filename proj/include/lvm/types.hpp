#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Core data model for the composite-endpoint latent variable toolkit:
// patient records, responder rules, the structural parameter vector and
// its unconstrained reparameterization, fit and effect-estimate results.

namespace lvm {

constexpr double kInf = std::numeric_limits<double>::infinity();

class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

// An arm-level response probability pinned at 0 or 1, where odds are undefined.
class DegenerateEstimate : public std::runtime_error {
 public:
  explicit DegenerateEstimate(const std::string& what) : std::runtime_error(what) {}
};

// One subject: treatment arm, two baselines, two continuous outcomes,
// one ordinal outcome (1 = best grade .. k3 = worst) and one binary outcome
// (0 = responder level by convention).
struct PatientRecord {
  std::string id;
  int treat = 0;
  double y10 = 0.0;
  double y20 = 0.0;
  double y1 = 0.0;
  double y2 = 0.0;
  int y3 = 1;
  int y4 = 0;
};

struct Dataset {
  std::vector<PatientRecord> patients;
  int k3 = 5;

  int n() const { return static_cast<int>(patients.size()); }
  int n_arm(int treat) const;
  // Throws std::invalid_argument on the first record violating the invariants
  // (ordinal out of range, non-binary flags, non-finite values).
  void validate() const;
};

// Component thresholds defining the composite responder.
// The ordinal component is expressed on the observed scale (y3 <= w_max);
// its latent-scale image is the corresponding fitted cut-point.
// y4_responder_level empty means the binary component never binds.
struct ResponderRule {
  double theta1 = -4.0;
  double theta2 = -0.6;
  int w_max = 3;
  std::optional<int> y4_responder_level = 0;

  void validate(int k3) const;
};

// 1 iff the record meets every component criterion of the rule.
int observed_response(const PatientRecord& rec, const ResponderRule& rule);

// The 21 structural parameters: means/slopes for the four outcomes,
// ordinal cut-points, continuous error SDs and the six error correlations.
// Fixed conventions (ordinal intercept 0, unit latent variances, binary
// cut at 0) are baked into the model code, not stored here.
struct LatentParams {
  double alpha0 = 0.0, alpha1 = 0.0, alpha2 = 0.0;   // y1: intercept, treat, baseline
  double beta0 = 0.0, beta1 = 0.0, beta2 = 0.0;      // y2
  double gamma1 = 0.0;                               // y3*: treat
  double psi0 = 0.0, psi1 = 0.0;                     // y4*: intercept, treat
  std::array<double, 4> tau3 = {-1.0, -0.1, 0.45, 1.3};
  double sigma1 = 1.0, sigma2 = 1.0;
  double rho12 = 0.0, rho13 = 0.0, rho14 = 0.0, rho23 = 0.0, rho24 = 0.0, rho34 = 0.0;

  Eigen::Vector4d mean(int treat, double y10, double y20) const {
    return {alpha0 + alpha1 * treat + alpha2 * y10,
            beta0 + beta1 * treat + beta2 * y20,
            gamma1 * treat,
            psi0 + psi1 * treat};
  }

  // Componentwise invariants only; positive definiteness of the implied
  // covariance is checked separately by sigma_matrix().
  void validate() const;
};

// Index layout of the unconstrained 21-vector.
namespace uidx {
enum : int {
  alpha0 = 0, alpha1, alpha2, beta0, beta1, beta2, gamma1, psi0, psi1,
  tau1, ltau2, ltau3, ltau4,   // first cut-point, then log-increments
  d1, d2,                      // log SDs
  d12, d13, d14, d23, d24, d34,
  count
};
}

struct UnconstrainedParams {
  Eigen::Matrix<double, 21, 1> v = Eigen::Matrix<double, 21, 1>::Zero();
};

// sigma = exp(d); rho = 2*expit(d)-1; cut-points as cumulative exp increments.
// Round-trips with from_unconstrained to ~1e-15. Throws on non-increasing tau3.
UnconstrainedParams to_unconstrained(const LatentParams& p);
// Total on finite input: any finite 21-vector maps to valid componentwise params.
LatentParams from_unconstrained(const UnconstrainedParams& u);

// 4x4 error covariance: diag (sigma1^2, sigma2^2, 1, 1), off-diagonals
// rho * sigma products. Throws NotPositiveDefinite when the rho combination
// is infeasible.
Eigen::Matrix4d sigma_matrix(const LatentParams& p);
// Assembly without the definiteness check.
Eigen::Matrix4d sigma_matrix_unchecked(const LatentParams& p);

struct FitResult {
  LatentParams params;
  UnconstrainedParams unconstrained;
  Eigen::MatrixXd cov_unconstrained;   // 21x21, symmetric
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;
  bool hessian_repaired = false;
  bool underflow_at_optimum = false;
};

enum class EffectScale { odds_ratio, risk_ratio, risk_difference };

// Treatment effect with Wald uncertainty. For the odds-ratio scale the
// estimate is the log odds ratio; risk ratio and risk difference are stored
// on their natural scales.
struct EffectEstimate {
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  double p_treat = 0.0;
  double p_control = 0.0;
  EffectScale scale = EffectScale::odds_ratio;
  bool converged = true;
  std::string note;
};

}  // namespace lvm
