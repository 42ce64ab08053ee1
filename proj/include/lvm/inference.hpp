#pragma once

#include "lvm/numerics.hpp"
#include "lvm/types.hpp"

// Response-probability estimands and treatment effects with delta-method
// uncertainty, evaluated on the fitted latent model.

namespace lvm {

class DegenerateEstimate : public std::runtime_error {
 public:
  explicit DegenerateEstimate(const std::string& what) : std::runtime_error(what) {}
};

// P(response | treat, baselines): rectangle probability of the latent vector
// under the responder rule. The ordinal threshold is the cut-point matching
// rule.w_max; a binary responder level of 1 is handled by reflecting the
// fourth coordinate; disabled components marginalize away.
double response_prob(const LatentParams& p, int treat, double y10, double y20,
                     const ResponderRule& rule, const QmcOptions& opts = {});

// n x 2 matrix of per-patient response probabilities with treatment forced
// to 0 (column 0) and 1 (column 1). One ordering/Cholesky is shared across
// patients; QMC shifts are derived from (opts.seed, patient index), so both
// arms of a patient share points and the result is order-independent.
Eigen::MatrixXd response_prob_batch(const LatentParams& p, const Dataset& data,
                                    const ResponderRule& rule, const QmcOptions& opts = {});

struct EffectOptions {
  QmcOptions point_qmc{20000, 8};  // effect point estimate
  QmcOptions grad_qmc{2048, 4};    // delta-method gradient evaluations
  double fd_step = 1e-5;
  double z_crit = 1.96;
};

// Population-averaged log odds ratio: per-patient counterfactual response
// probabilities aggregated within arm, odds formed from the means. Standard
// error by central differences of the estimand in unconstrained space
// against the fit covariance. Throws DegenerateEstimate when an arm mean
// reaches 0 or 1.
EffectEstimate odds_ratio_effect(const FitResult& fit, const Dataset& data,
                                 const ResponderRule& rule, const EffectOptions& opts = {});

struct RiskEffects {
  EffectEstimate difference;
  EffectEstimate ratio;
};

// Same machinery on the risk-difference and risk-ratio scales.
RiskEffects risk_effects(const FitResult& fit, const Dataset& data, const ResponderRule& rule,
                         const EffectOptions& opts = {});

}  // namespace lvm
