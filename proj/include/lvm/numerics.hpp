#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>

#include "lvm/types.hpp"

// Numerical kernels: Gaussian rectangle probabilities in 1/2/4 dimensions,
// the conditional normal of the discrete block given the continuous block,
// matrix repair, numerical differentiation and a quasi-Newton minimizer.

namespace lvm {

double norm_pdf(double x);
double norm_cdf(double x);
// Inverse standard normal CDF (Wichura's PPND16), p in (0,1).
double norm_quantile(double p);

// P(Z1 <= b1, Z2 <= b2) for standard bivariate normal with correlation r.
// Deterministic Gauss-Legendre evaluation, absolute error well below 1e-12.
// Bounds may be +-inf; |r| >= 1 is rejected.
double phi2(double b1, double b2, double r);

// Axis-aligned integration region with +-inf entries allowed.
struct Rectangle {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct QmcOptions {
  int points = 20000;        // lattice points per shift
  int shifts = 8;            // random shifts (error estimate needs >= 2)
  std::uint64_t seed = 0x51ab5eedULL;
};

struct ProbEstimate {
  double value = 0.0;
  double error = 0.0;        // ~3 standard errors across shifts
};

// P(Y <= upper) for Y ~ N(mu, sigma), randomized quasi-Monte-Carlo with
// greedy variable reordering. +inf components marginalize analytically;
// dimensions <= 2 after reduction are evaluated deterministically.
// Deterministic given opts.seed. Throws NotPositiveDefinite.
ProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& mu,
                     const Eigen::MatrixXd& sigma, const QmcOptions& opts = {});

ProbEstimate phi4(const Eigen::Vector4d& upper, const Eigen::Vector4d& mu,
                  const Eigen::Matrix4d& sigma, const QmcOptions& opts = {});

// Many rectangle probabilities against one covariance: the ordering and
// Cholesky factor are fixed from a reference bound vector, then reused for
// every call. Bounds passed to cdf_with_plan are b = upper - mu in the
// ORIGINAL variable order.
struct CdfPlan {
  Eigen::MatrixXd L;
  std::vector<int> perm;
};

CdfPlan make_cdf_plan(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& reference_b);
ProbEstimate cdf_with_plan(const CdfPlan& plan, const Eigen::VectorXd& b,
                           const QmcOptions& opts);

// Conditional law of the two latent discrete errors given the observed
// continuous pair.
struct CondNormal {
  Eigen::Vector2d mu;       // (mu_{3|1,2}, mu_{4|1,2})
  Eigen::Matrix2d sigma;    // Sigma_{3,4|1,2}

  bool usable() const {
    return sigma(0, 0) > 0.0 && sigma(1, 1) > 0.0 &&
           sigma(0, 1) * sigma(0, 1) < sigma(0, 0) * sigma(1, 1);
  }
};

// The (y1,y2)-independent pieces of the conditioning: regression weights of
// each latent discrete component on the centered continuous pair, and the
// conditional covariance.
struct CondCoefs {
  double c31, c32, c41, c42;
  Eigen::Matrix2d sigma;
};

CondCoefs conditional_coefs(const LatentParams& p);

CondNormal conditional_34(const LatentParams& p, double y1, double y2,
                          double mu1, double mu2, double mu3, double mu4);

// Lower Cholesky factor, or nullopt when the matrix is not positive definite.
std::optional<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& m);

// Eigenvalue clipping at eps; symmetric PD output, identity on PD inputs.
// Throws std::invalid_argument on asymmetric input.
Eigen::MatrixXd nearest_pd(const Eigen::MatrixXd& m, double eps = 1e-8);

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

// Central differences with per-coordinate step max(h, h*|x_i|).
Eigen::VectorXd num_gradient(const ScalarFn& f, const Eigen::VectorXd& x, double h = 1e-5);
Eigen::MatrixXd num_hessian(const ScalarFn& f, const Eigen::VectorXd& x, double h = 1e-5);

struct MinimizeOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;     // infinity norm of the gradient
  double f_reltol = 1e-10;    // relative objective change
  double fd_step = 1e-5;      // step for the internal numerical gradient
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  bool converged = false;
  int n_iter = 0;
};

// BFGS with backtracking line search; the gradient is computed by central
// differences unless an analytic gradient is supplied.
MinimizeResult minimize(const ScalarFn& f, const Eigen::VectorXd& x0,
                        const MinimizeOptions& opts = {},
                        const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>* grad = nullptr);

// Adaptive Simpson quadrature on [a, b].
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol, int max_depth = 40);

}  // namespace lvm
