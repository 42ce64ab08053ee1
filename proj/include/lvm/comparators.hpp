#pragma once

#include <Eigen/Dense>

#include "lvm/types.hpp"

// Reference analyses for the composite endpoint: logistic regression on the
// overall responder indicator, and the augmented approach keeping one
// continuous outcome on its original scale with the remaining components
// collapsed into a failure indicator.

namespace lvm {

struct GlmFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;      // inverse Fisher information
  bool converged = false;
  bool separation = false;  // diverging coefficients (perfect separation)
  double deviance = 0.0;
  int n_iter = 0;
};

// Logistic regression by iteratively reweighted least squares; convergence
// on coefficient change below tol.
GlmFit logistic_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_iter = 100,
                    double tol = 1e-8);

// Responder indicator regressed on (1, treatment, y10, y20); the reported
// effect is the treatment coefficient with its Wald interval, and the per-arm
// probabilities are counterfactual averages of the fitted response curve.
EffectEstimate standard_binary_analysis(const Dataset& data, const ResponderRule& rule,
                                        double z_crit = 1.96);

struct AugbinOptions {
  int retained_outcome = 1;   // which continuous outcome keeps its scale (1 or 2)
  double quad_tol = 1e-10;    // response-probability integral tolerance
  double fd_step = 1e-5;
  double z_crit = 1.96;
};

// Linear model for the retained continuous outcome, logistic model for the
// failure indicator built from the other three components, per-patient
// response probability as the integral of the failure-free probability
// against the fitted outcome density, aggregated like the latent-model odds
// ratio. Delta-method SE over the stacked coefficients of both models with a
// block-diagonal covariance. A degenerate failure indicator (all 0 or all 1)
// falls back to the continuous-only probability with a warning note.
EffectEstimate augmented_binary_analysis(const Dataset& data, const ResponderRule& rule,
                                         const AugbinOptions& opts = {});

}  // namespace lvm
