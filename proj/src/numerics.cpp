#include "lvm/numerics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

#include "lvm/rng.hpp"

namespace lvm {

namespace {
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kTwoPi = 6.2831853071795864769;
}  // namespace

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(kTwoPi); }

double norm_cdf(double x) {
  if (x == kInf) return 1.0;
  if (x == -kInf) return 0.0;
  return 0.5 * std::erfc(-x / kSqrt2);
}

// Wichura's algorithm AS 241 (PPND16), relative error ~1e-15.
double norm_quantile(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  const double q = p - 0.5;
  double r, val;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    val = q *
          (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
              1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
            1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
          (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
              5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
            4.2313330701600911252e+1) * r + 1.0);
    return val;
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

// ---------------------------------------------------------------------------
// Bivariate normal CDF
// ---------------------------------------------------------------------------

namespace {

// Gauss-Legendre half-rules.
const double kGLx6[3] = {0.9324695142031521, 0.6612093864662645, 0.2386191860831969};
const double kGLw6[3] = {0.1713244923791704, 0.3607615730481386, 0.4679139345726910};
const double kGLx12[6] = {0.9815606342467192, 0.9041172563704749, 0.7699026741943047,
                          0.5873179542866175, 0.3678314989981802, 0.1252334085114689};
const double kGLw12[6] = {0.04717533638651183, 0.1069393259953184, 0.1600783285433462,
                          0.2031674267230659, 0.2334925365383548, 0.2491470458134028};
const double kGLx20[10] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                           0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                           0.5108670019508271, 0.3737060887154195, 0.2277858511416451,
                           0.07652652113349733};
const double kGLw20[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410907,
                           0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                           0.1316886384491766, 0.1420961093183820, 0.1491729864726037,
                           0.1527533871307258};

// P(X > dh, Y > dk) for standard bivariate normal, correlation r.
// Drezner-Wesolowsky approach with the Genz modification near |r|=1.
double bvnu(double dh, double dk, double r) {
  double h = dh, k = dk, hk = h * k, bvn = 0.0;
  const double ar = std::fabs(r);
  const double* x;
  const double* w;
  int ng;
  if (ar < 0.3) {
    ng = 3; x = kGLx6; w = kGLw6;
  } else if (ar < 0.75) {
    ng = 6; x = kGLx12; w = kGLw12;
  } else {
    ng = 10; x = kGLx20; w = kGLw20;
  }
  if (ar < 0.925) {
    if (ar > 0.0) {
      const double hs = (h * h + k * k) / 2.0;
      const double asr = std::asin(r);
      for (int i = 0; i < ng; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          const double sn = std::sin(asr * (is * x[i] + 1.0) / 2.0);
          bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
      }
      bvn = bvn * asr / (2.0 * kTwoPi);
    }
    bvn += norm_cdf(-h) * norm_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (ar < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 16.0;
      double asr = -(bs / as + hk) / 2.0;
      if (asr > -100.0)
        bvn = a * std::exp(asr) *
              (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
      if (-hk < 100.0) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * norm_cdf(-b / a) * b *
               (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
      }
      a /= 2.0;
      for (int i = 0; i < ng; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          double xs = a * (is * x[i] + 1.0);
          xs = xs * xs;
          const double rs = std::sqrt(1.0 - xs);
          asr = -(bs / xs + hk) / 2.0;
          if (asr > -100.0) {
            bvn += a * w[i] * std::exp(asr) *
                   (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                    (1.0 + c * xs * (1.0 + d * xs)));
          }
        }
      }
      bvn = -bvn / kTwoPi;
    }
    if (r > 0.0) {
      bvn += norm_cdf(-std::max(h, k));
    } else {
      bvn = -bvn;
      if (k > h) bvn += norm_cdf(k) - norm_cdf(h);
    }
  }
  return std::min(1.0, std::max(0.0, bvn));
}

}  // namespace

double phi2(double b1, double b2, double r) {
  if (!(std::fabs(r) < 1.0)) throw std::invalid_argument("phi2: correlation must satisfy |r| < 1");
  if (b1 == -kInf || b2 == -kInf) return 0.0;
  if (b1 == kInf) return norm_cdf(b2);
  if (b2 == kInf) return norm_cdf(b1);
  return bvnu(-b1, -b2, r);
}

// ---------------------------------------------------------------------------
// Quasi-Monte-Carlo rectangle probabilities
// ---------------------------------------------------------------------------

namespace {

// Cholesky with greedy pivoting: at each stage pick the remaining variable
// with the smallest conditional probability, conditioning earlier variables
// at their truncated expectations (Gibson/Glasbey/Elston ordering).
struct OrderedChol {
  Eigen::MatrixXd L;
  Eigen::VectorXd b;  // permuted bounds used for the ordering
  std::vector<int> perm;
};

// E[Z | Z < t] for standard normal.
double truncated_mean_upper(double t) {
  const double p = norm_cdf(t);
  if (p > 1e-300) return -norm_pdf(t) / p;
  return t - 1.0 / t;  // asymptotic for t << 0
}

OrderedChol ordered_cholesky(Eigen::MatrixXd c, Eigen::VectorXd b) {
  const int d = static_cast<int>(c.rows());
  OrderedChol oc;
  oc.L = Eigen::MatrixXd::Zero(d, d);
  oc.perm.resize(d);
  for (int i = 0; i < d; ++i) oc.perm[i] = i;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(d);

  for (int j = 0; j < d; ++j) {
    int best = j;
    double best_p = kInf;
    for (int i = j; i < d; ++i) {
      double s2 = c(i, i) - oc.L.row(i).head(j).squaredNorm();
      s2 = std::max(s2, 1e-14);
      const double t = (b(i) - oc.L.row(i).head(j).dot(y.head(j))) / std::sqrt(s2);
      const double p = norm_cdf(t);
      if (p < best_p) {
        best_p = p;
        best = i;
      }
    }
    if (best != j) {
      c.row(best).swap(c.row(j));
      c.col(best).swap(c.col(j));
      std::swap(b(best), b(j));
      oc.L.row(best).head(j).swap(oc.L.row(j).head(j));
      std::swap(oc.perm[best], oc.perm[j]);
    }
    double s2 = c(j, j) - oc.L.row(j).head(j).squaredNorm();
    s2 = std::max(s2, 1e-14);
    oc.L(j, j) = std::sqrt(s2);
    for (int i = j + 1; i < d; ++i)
      oc.L(i, j) = (c(i, j) - oc.L.row(i).head(j).dot(oc.L.row(j).head(j))) / oc.L(j, j);
    const double t = (b(j) - oc.L.row(j).head(j).dot(y.head(j))) / oc.L(j, j);
    y(j) = truncated_mean_upper(t);
  }
  oc.b = b;
  return oc;
}

// Richtmyer generators: sqrt(prime), used only when more than two
// dimensions have to be sampled (i.e. above four variables in total).
const double kQmcGen[8] = {1.4142135623730951, 1.7320508075688772, 2.23606797749979,
                           2.6457513110645907, 3.3166247903554, 3.605551275463989,
                           4.123105625617661,  4.358898943540674};

// Largest Fibonacci pair (n, z) with n <= cap; the rank-1 lattice with
// generator (1, z) is the optimal two-dimensional construction.
void fibonacci_pair(long cap, long* n, long* z) {
  long f1 = 1, f2 = 2;
  while (f1 + f2 <= cap) {
    const long t = f1 + f2;
    f1 = f2;
    f2 = t;
  }
  *n = f2;
  *z = f1;
}

// Randomized lattice rule for P(Z <= b) with Z ~ N(0, L L'); bounds are in
// the ordering of L. The last two coordinates are integrated exactly through
// the conditional bivariate CDF, so only d-2 dimensions are sampled:
// equidistant points for one dimension, a Fibonacci lattice for two,
// Kronecker otherwise. Baker-folded with random shifts; the estimator is a
// smooth function of (L, b) for a fixed seed.
ProbEstimate qmc_cdf_kernel(const Eigen::MatrixXd& L, const Eigen::VectorXd& b,
                            const QmcOptions& opts) {
  const int d = static_cast<int>(L.rows());
  for (int i = 0; i < d; ++i)
    if (b(i) == -kInf) return {0.0, 0.0};
  if (d == 1) return {norm_cdf(b(0) / L(0, 0)), 1e-15};
  if (d == 2) {
    const double s2 = std::sqrt(L(1, 0) * L(1, 0) + L(1, 1) * L(1, 1));
    const double r = L(1, 0) / s2;
    return {phi2(b(0) / L(0, 0), b(1) / s2, r), 1e-14};
  }

  // conditional scale of the terminal pair given coordinates 0..d-3
  const int na = d - 2, nb = d - 1;
  const double s_a = L(na, na);
  const double s_b = std::sqrt(L(nb, na) * L(nb, na) + L(nb, nb) * L(nb, nb));
  const double r_ab = L(nb, na) / s_b;

  const int nshift = std::max(2, opts.shifts);
  const int ndim = d - 2;  // sampled dimensions
  long n = std::max(16, opts.points), z = 0;
  if (ndim == 2) fibonacci_pair(n, &n, &z);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> shift_mean(nshift);
  std::vector<double> yv(ndim);
  std::vector<double> delta(ndim);
  const double e0 = norm_cdf(b(0) / L(0, 0));

  for (int k = 0; k < nshift; ++k) {
    const std::uint64_t base = mix_seed(opts.seed, static_cast<std::uint64_t>(k));
    for (int j = 0; j < ndim; ++j)
      delta[j] = (static_cast<double>(mix_seed(base, j + 1) >> 11) + 0.5) * 0x1.0p-53;
    double acc = 0.0;
    for (long s = 1; s <= n; ++s) {
      double e = e0;
      double f = e0;
      for (int j = 1; j <= ndim; ++j) {
        double u;
        if (ndim <= 2)
          u = (j == 1) ? s * inv_n : static_cast<double>((s * z) % n) * inv_n;
        else
          u = s * kQmcGen[j - 1];
        u += delta[j - 1];
        u = std::fabs(2.0 * (u - std::floor(u)) - 1.0);
        double arg = u * e;
        arg = std::min(std::max(arg, 1e-100), 1.0 - 1e-16);
        yv[j - 1] = norm_quantile(arg);
        if (j == ndim) break;
        double num = b(j);
        for (int m = 0; m < j; ++m) num -= L(j, m) * yv[m];
        e = norm_cdf(num / L(j, j));
        f *= e;
      }
      double mu_a = 0.0, mu_b = 0.0;
      for (int m = 0; m < ndim; ++m) {
        mu_a += L(na, m) * yv[m];
        mu_b += L(nb, m) * yv[m];
      }
      f *= phi2((b(na) - mu_a) / s_a, (b(nb) - mu_b) / s_b, r_ab);
      acc += f;
    }
    shift_mean[k] = acc * inv_n;
  }
  double mean = 0.0;
  for (double v : shift_mean) mean += v;
  mean /= nshift;
  double var = 0.0;
  for (double v : shift_mean) var += (v - mean) * (v - mean);
  var /= (nshift - 1);
  const double err = 3.0 * std::sqrt(var / nshift);
  return {std::min(1.0, std::max(0.0, mean)), err};
}

}  // namespace

ProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& mu,
                     const Eigen::MatrixXd& sigma, const QmcOptions& opts) {
  const int d = static_cast<int>(upper.size());
  if (mu.size() != d || sigma.rows() != d || sigma.cols() != d)
    throw std::invalid_argument("mvn_cdf: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("mvn_cdf: covariance is not positive definite");

  // +inf components marginalize away; -inf makes the probability zero.
  std::vector<int> keep;
  keep.reserve(d);
  for (int i = 0; i < d; ++i) {
    const double bi = upper(i) - mu(i);
    if (bi == -kInf) return {0.0, 0.0};
    if (bi != kInf) keep.push_back(i);
  }
  const int m = static_cast<int>(keep.size());
  if (m == 0) return {1.0, 0.0};

  Eigen::VectorXd b(m);
  Eigen::MatrixXd s(m, m);
  for (int i = 0; i < m; ++i) {
    b(i) = upper(keep[i]) - mu(keep[i]);
    for (int j = 0; j < m; ++j) s(i, j) = sigma(keep[i], keep[j]);
  }
  if (m == 1) return {norm_cdf(b(0) / std::sqrt(s(0, 0))), 1e-15};
  if (m == 2) {
    const double r = s(0, 1) / std::sqrt(s(0, 0) * s(1, 1));
    return {phi2(b(0) / std::sqrt(s(0, 0)), b(1) / std::sqrt(s(1, 1)), r), 1e-14};
  }
  const OrderedChol oc = ordered_cholesky(s, b);
  return qmc_cdf_kernel(oc.L, oc.b, opts);
}

ProbEstimate phi4(const Eigen::Vector4d& upper, const Eigen::Vector4d& mu,
                  const Eigen::Matrix4d& sigma, const QmcOptions& opts) {
  return mvn_cdf(upper, mu, sigma, opts);
}

CdfPlan make_cdf_plan(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& reference_b) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("make_cdf_plan: covariance is not positive definite");
  const OrderedChol oc = ordered_cholesky(sigma, reference_b);
  return {oc.L, oc.perm};
}

ProbEstimate cdf_with_plan(const CdfPlan& plan, const Eigen::VectorXd& b,
                           const QmcOptions& opts) {
  const int d = static_cast<int>(plan.L.rows());
  Eigen::VectorXd bp(d);
  for (int j = 0; j < d; ++j) bp(j) = b(plan.perm[j]);
  return qmc_cdf_kernel(plan.L, bp, opts);
}

// ---------------------------------------------------------------------------
// Conditional normal of the discrete block
// ---------------------------------------------------------------------------

CondCoefs conditional_coefs(const LatentParams& p) {
  const double r12 = p.rho12;
  const double om = 1.0 - r12 * r12;
  if (!(om > 0.0))
    throw std::invalid_argument("conditional_coefs: |rho12| must be < 1");
  CondCoefs c;
  c.c31 = (p.rho13 - r12 * p.rho23) / (p.sigma1 * om);
  c.c32 = (p.rho23 - r12 * p.rho13) / (p.sigma2 * om);
  c.c41 = (p.rho14 - r12 * p.rho24) / (p.sigma1 * om);
  c.c42 = (p.rho24 - r12 * p.rho14) / (p.sigma2 * om);
  const double v3 = 1.0 - (p.rho13 * p.rho13 - 2.0 * r12 * p.rho13 * p.rho23 + p.rho23 * p.rho23) / om;
  const double v4 = 1.0 - (p.rho14 * p.rho14 - 2.0 * r12 * p.rho14 * p.rho24 + p.rho24 * p.rho24) / om;
  const double cv = p.rho34 -
                    (p.rho13 * p.rho14 - r12 * p.rho13 * p.rho24 - r12 * p.rho14 * p.rho23 +
                     p.rho23 * p.rho24) / om;
  c.sigma << v3, cv, cv, v4;
  return c;
}

CondNormal conditional_34(const LatentParams& p, double y1, double y2,
                          double mu1, double mu2, double mu3, double mu4) {
  const CondCoefs c = conditional_coefs(p);
  CondNormal out;
  out.mu << mu3 + c.c31 * (y1 - mu1) + c.c32 * (y2 - mu2),
            mu4 + c.c41 * (y1 - mu1) + c.c42 * (y2 - mu2);
  out.sigma = c.sigma;
  return out;
}

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

std::optional<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return Eigen::MatrixXd(llt.matrixL());
}

Eigen::MatrixXd nearest_pd(const Eigen::MatrixXd& m, double eps) {
  if (m.rows() != m.cols()) throw std::invalid_argument("nearest_pd: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("nearest_pd: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() >= eps) return m;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(eps);
  Eigen::MatrixXd r = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

// ---------------------------------------------------------------------------
// Numerical differentiation
// ---------------------------------------------------------------------------

namespace {
double fd_step_for(double xi, double h) { return std::max(h, h * std::fabs(xi)); }
}  // namespace

Eigen::VectorXd num_gradient(const ScalarFn& f, const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  for (int i = 0; i < n; ++i) {
    const double hi = fd_step_for(x(i), h);
    xp(i) = x(i) + hi;
    const double fp = f(xp);
    xp(i) = x(i) - hi;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * hi);
  }
  return g;
}

Eigen::MatrixXd num_hessian(const ScalarFn& f, const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd hess(n, n);
  const double fx = f(x);
  Eigen::VectorXd xp = x;
  std::vector<double> step(n);
  for (int i = 0; i < n; ++i) step[i] = fd_step_for(x(i), h);
  for (int i = 0; i < n; ++i) {
    xp(i) = x(i) + step[i];
    const double fp = f(xp);
    xp(i) = x(i) - step[i];
    const double fm = f(xp);
    xp(i) = x(i);
    hess(i, i) = (fp - 2.0 * fx + fm) / (step[i] * step[i]);
    for (int j = i + 1; j < n; ++j) {
      xp(i) = x(i) + step[i];
      xp(j) = x(j) + step[j];
      const double fpp = f(xp);
      xp(j) = x(j) - step[j];
      const double fpm = f(xp);
      xp(i) = x(i) - step[i];
      const double fmm = f(xp);
      xp(j) = x(j) + step[j];
      const double fmp = f(xp);
      xp(i) = x(i);
      xp(j) = x(j);
      hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step[i] * step[j]);
    }
  }
  return 0.5 * (hess + hess.transpose());
}

// ---------------------------------------------------------------------------
// Quasi-Newton minimizer
// ---------------------------------------------------------------------------

MinimizeResult minimize(const ScalarFn& f, const Eigen::VectorXd& x0,
                        const MinimizeOptions& opts,
                        const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>* grad_fn) {
  const int n = static_cast<int>(x0.size());
  auto grad = [&](const Eigen::VectorXd& x) {
    return grad_fn ? (*grad_fn)(x) : num_gradient(f, x, opts.fd_step);
  };

  MinimizeResult res;
  res.x = x0;
  res.f = f(x0);
  if (!std::isfinite(res.f)) return res;

  Eigen::VectorXd g = grad(res.x);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  bool reset_used = false;

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    res.n_iter = iter;
    if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd p = -h_inv * g;
    double gp = g.dot(p);
    if (!(gp < 0.0) || !p.allFinite()) {
      h_inv.setIdentity();
      p = -g;
      gp = g.dot(p);
      if (!(gp < 0.0)) return res;
    }

    double alpha = (iter == 1) ? std::min(1.0, 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>()))
                               : 1.0;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + alpha * p;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * alpha * gp) {
        ok = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!ok) {
      if (!reset_used) {
        reset_used = true;
        h_inv.setIdentity();
        continue;
      }
      return res;
    }

    Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double f_prev = res.f;
    res.x = x_new;
    res.f = f_new;
    g = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Eigen::VectorXd hy = h_inv * y;
      const double yhy = y.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
      h_inv -= (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    if (std::fabs(f_prev - res.f) < opts.f_reltol * (std::fabs(f_prev) + 1e-10)) {
      res.converged = true;
      return res;
    }
  }
  return res;  // iteration cap reached, converged stays false
}

// ---------------------------------------------------------------------------
// Adaptive quadrature
// ---------------------------------------------------------------------------

namespace {

double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double both = left + right;
  if (depth <= 0 || std::fabs(both - whole) <= 15.0 * tol)
    return both + (both - whole) / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth) {
  if (a == b) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace lvm
