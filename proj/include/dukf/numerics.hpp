#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>

#include "dukf/errors.hpp"
#include "dukf/rng.hpp"

namespace dukf {

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

inline double max_abs_asymmetry(const Eigen::MatrixXd& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

namespace detail {

/// Cholesky factorization tolerant of semi-definite input: a pivot that is
/// zero (to within tolerance) produces a zero column, which is consistent
/// only if the remaining column entries are also negligible.  Returns false
/// instead of throwing so the caller can retry with jitter.
inline bool cholesky_psd(const Eigen::MatrixXd& m, Eigen::MatrixXd& l) {
  const Eigen::Index n = m.rows();
  const double scale =
      std::max(m.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const double tol = static_cast<double>(n) * 1e-14 * scale;
  l.setZero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (d > tol) {
      const double root = std::sqrt(d);
      l(j, j) = root;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / root;
      }
    } else if (d < -tol) {
      return false;
    } else {
      // Zero pivot: column must vanish too, otherwise m was indefinite.
      for (Eigen::Index i = j + 1; i < n; ++i) {
        const double r = m(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
        if (std::abs(r) > 16.0 * std::sqrt(tol * scale)) return false;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Default diagonal jitter used by the factorization retry ladder: a tiny
/// multiple of the mean diagonal magnitude (absolute floor for the all-zero
/// matrix, which factors without any jitter anyway).
inline double default_factorization_jitter(const Eigen::MatrixXd& m) {
  const double mean_diag =
      m.diagonal().cwiseAbs().sum() / static_cast<double>(m.rows());
  return 1e-12 * std::max(mean_diag, 1e-30);
}

/// Lower-triangular factor L with L*L^T == m for symmetric positive
/// semi-definite m.  On failure retries with `jitter`, 10*jitter, 100*jitter
/// added to the diagonal (three retries), then throws NotFactorizable.
/// Pass jitter = 0 to forbid regularization entirely.
inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m,
                                       double jitter) {
  Eigen::MatrixXd sym = symmetrized(m);
  Eigen::MatrixXd l;
  if (detail::cholesky_psd(sym, l)) return l;
  if (jitter > 0.0) {
    double eps = jitter;
    for (int attempt = 0; attempt < 3; ++attempt, eps *= 10.0) {
      Eigen::MatrixXd bumped = sym;
      bumped.diagonal().array() += eps;
      if (detail::cholesky_psd(bumped, l)) return l;
    }
  }
  throw NotFactorizable(
      "matrix_sqrt_psd: matrix is not positive semi-definite (dim " +
      std::to_string(m.rows()) + ", jitter " + std::to_string(jitter) + ")");
}

inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
  return matrix_sqrt_psd(m, default_factorization_jitter(m));
}

// ---------------------------------------------------------------------------
// Scalar distributions
// ---------------------------------------------------------------------------

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

/// Phi(x), accurate in both tails (erfc-based, no cancellation).
inline double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Inverse standard normal CDF, Wichura's AS 241 (PPND16) rational
/// approximation, relative error below 1e-15 over (0, 1).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error("std_normal_quantile: p must lie strictly in (0,1), got " +
                std::to_string(p));
  }
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    x = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    x = num / den;
  }
  return (q < 0.0) ? -x : x;
}

inline double sample_std_normal(RngStream& rng) {
  return std_normal_quantile(rng.uniform01());
}

/// Quantile of the Rayleigh distribution with scale sigma
/// (CDF 1 - exp(-x^2 / (2 sigma^2)), so E[X^2] = 2 sigma^2).
inline double rayleigh_quantile(double sigma, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw Error("rayleigh_quantile: u must lie strictly in (0,1)");
  }
  return sigma * std::sqrt(-2.0 * std::log1p(-u));
}

inline double sample_rayleigh(double sigma, RngStream& rng) {
  return rayleigh_quantile(sigma, rng.uniform01());
}

/// Quantile of a zero-mean normal with std dev sigma truncated to
/// [-delta, delta].  Degenerate parameters (sigma or delta zero) give 0.
inline double truncated_normal_quantile(double sigma, double delta, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw Error("truncated_normal_quantile: u must lie strictly in (0,1)");
  }
  if (sigma <= 0.0 || delta <= 0.0) return 0.0;
  const double a = delta / sigma;
  // CDF mass below -delta is Phi(-a); interior mass is erf(a/sqrt 2).
  const double p = std_normal_cdf(-a) + u * std::erf(a / std::sqrt(2.0));
  double x = sigma * std_normal_quantile(p);
  if (x > delta) x = delta;
  if (x < -delta) x = -delta;
  return x;
}

inline double sample_truncated_normal(double sigma, double delta,
                                      RngStream& rng) {
  return truncated_normal_quantile(sigma, delta, rng.uniform01());
}

/// Second moment E[eps^2] of the truncated normal above:
///   sigma^2 * (1 - a*phi(a) / (Phi(a) - 1/2)),  a = delta / sigma.
/// The direct form cancels catastrophically as a -> 0 (the value tends to
/// the uniform limit delta^2/3), so small a switches to the series
///   sigma^2 * (a^2/3 - 2 a^4/45 + 2 a^6/945).
inline double truncated_normal_second_moment(double sigma, double delta) {
  if (sigma <= 0.0 || delta <= 0.0) return 0.0;
  const double a = delta / sigma;
  if (a < 0.02) {
    const double a2 = a * a;
    return sigma * sigma * a2 *
           (1.0 / 3.0 + a2 * (-2.0 / 45.0 + a2 * (2.0 / 945.0)));
  }
  const double half_mass = 0.5 * std::erf(a / std::sqrt(2.0));
  return sigma * sigma * (1.0 - a * std_normal_pdf(a) / half_mass);
}

// ---------------------------------------------------------------------------
// Perron-Frobenius left eigenvector
// ---------------------------------------------------------------------------

struct PfVector {
  Eigen::VectorXd v;      ///< nonnegative, sums to 1, v^T C = v^T
  bool unique = false;    ///< false when a second starting point converged elsewhere
  int iterations = 0;
  double residual = 0.0;  ///< ||v^T C - v^T||_inf at exit
};

namespace detail {

struct PowerIterOutcome {
  Eigen::VectorXd v;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Damped power iteration v <- v^T (I + C) / 2, which converges for the
/// eigenvalue-1 left eigenspace even when C has an eigenvalue at -1
/// (periodic chains).  Residual is measured against the undamped map.
inline PowerIterOutcome pf_power_iteration(const Eigen::MatrixXd& c,
                                           Eigen::VectorXd v, double tol,
                                           int max_iters) {
  PowerIterOutcome out;
  v /= v.sum();
  Eigen::VectorXd next;
  for (int it = 0; it < max_iters; ++it) {
    next.noalias() = c.transpose() * v;
    const double resid = (next - v).cwiseAbs().maxCoeff();
    if (resid <= tol) {
      out.v = v;
      out.iterations = it;
      out.residual = resid;
      out.converged = true;
      return out;
    }
    v = 0.5 * (v + next);
    v /= v.sum();
  }
  out.v = v;
  out.iterations = max_iters;
  out.residual = (c.transpose() * v - v).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace detail

/// Left eigenvector of a row-stochastic matrix for eigenvalue 1, normalized
/// to sum 1.  `unique` reports whether a second, differently seeded
/// iteration landed on the same vector; for reducible matrices (several
/// closed communicating classes) it comes back false.  Throws NoConvergence
/// when the iteration budget is exhausted.
inline PfVector pf_left_eigenvector(const Eigen::MatrixXd& c) {
  const Eigen::Index n = c.rows();
  if (n == 0 || c.cols() != n) {
    throw Error("pf_left_eigenvector: matrix must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(c.row(i).sum() - 1.0) > 1e-9 || c.row(i).minCoeff() < -1e-12) {
      throw Error("pf_left_eigenvector: matrix is not row-stochastic (row " +
                  std::to_string(i) + ")");
    }
  }
  const double tol = 1e-12;
  const int max_iters = 100000;
  Eigen::VectorXd start1 = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd start2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    start2(i) = static_cast<double>(i + 1);
  }
  auto first = detail::pf_power_iteration(c, start1, tol, max_iters);
  if (!first.converged) {
    throw NoConvergence("pf_left_eigenvector: no convergence after " +
                        std::to_string(max_iters) + " iterations (residual " +
                        std::to_string(first.residual) + ")");
  }
  auto second = detail::pf_power_iteration(c, start2, tol, max_iters);
  if (!second.converged) {
    throw NoConvergence(
        "pf_left_eigenvector: uniqueness probe failed to converge");
  }
  PfVector out;
  out.v = first.v;
  out.iterations = first.iterations;
  out.residual = first.residual;
  out.unique = (first.v - second.v).cwiseAbs().maxCoeff() <= 1e-8;
  return out;
}

}  // namespace dukf
