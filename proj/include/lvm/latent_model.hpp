#pragma once

#include "lvm/numerics.hpp"
#include "lvm/types.hpp"

// Observed-data log-likelihood of the joint model (bivariate normal density
// for the continuous pair times the conditional cell probability of the
// observed ordinal/binary pair) and its maximization.

namespace lvm {

// Joint probability of the observed (ordinal level w, binary level k) pair
// given the conditional law of the latent pair: four-term bivariate-CDF
// inclusion-exclusion over the cut-point rectangle. Levels use w in 1..5 and
// k in {0,1}; the outermost thresholds are -inf/+inf and short-circuit.
double cell_probability(const LatentParams& p, int w, int k, const CondNormal& cond);

struct LogLikDiag {
  bool floored = false;        // some cell probability hit the underflow floor
  bool invalid_cond = false;   // conditional covariance unusable (non-PD rho combination)
};

// Sum over patients of the continuous log-density plus the log cell
// probability. Cell probabilities are floored at 1e-300 so the result is a
// large negative number rather than -inf/NaN in degenerate corners.
double log_likelihood(const UnconstrainedParams& u, const Dataset& data,
                      LogLikDiag* diag = nullptr);

struct FitOptions {
  MinimizeOptions minimize;
  std::uint64_t seed = 0x1234f17;   // perturbed restart noise
  int min_patients = 30;
};

// Starting values: least squares for the two continuous outcomes, an
// independent ordered probit for the ordinal, a closed-form probit for the
// binary, zero correlations.
UnconstrainedParams starting_values(const Dataset& data);

// Maximum likelihood fit. Throws std::invalid_argument on degenerate input
// (single-arm data, too few patients); optimizer non-convergence is reported
// in-band through FitResult::converged after one perturbed restart.
FitResult fit(const Dataset& data, const FitOptions& opts = {});

}  // namespace lvm
