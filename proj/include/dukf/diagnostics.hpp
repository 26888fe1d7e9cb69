#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dukf/errors.hpp"
#include "dukf/numerics.hpp"
#include "dukf/scenario.hpp"

namespace dukf {

/// Scalar bound constants for the boundedness/stability analysis.  These are
/// assumptions about the trajectory (slopes of the measurement map, fading
/// extremes, ...) that the simulation cannot observe directly, so the
/// diagnostics built on them are heuristic and report-only.  The composite
/// noise bounds combine as
///   r_lo = 2 sigma_theta_lo^2 r_v_lo + r_n_lo + r_nu_lo   (r_hi analogous).
struct BoundConstants {
  double f_lo = 1.0, f_hi = 1.0;          ///< singular values of F
  double h_lo = 1.0, h_hi = 1.0;          ///< measurement magnitude bounds
  double beta_lo = 1.0, beta_hi = 1.0;    ///< linearization-gain bounds
  double theta_lo = 1.0, theta_hi = 1.0;  ///< fading coefficient bounds
  double q_lo = 1.0, q_hi = 1.0;          ///< process-noise eigenvalue bounds
  double r_v_lo = 1.0, r_v_hi = 1.0;
  double r_n_lo = 0.0, r_n_hi = 0.0;
  double r_nu_lo = 0.0, r_nu_hi = 0.0;
  double delta_eps_hi = 0.0;              ///< bound on the estimate error eps
  double sigma_theta_lo = std::sqrt(0.5), sigma_theta_hi = std::sqrt(0.5);

  double r_lo() const {
    return 2.0 * sigma_theta_lo * sigma_theta_lo * r_v_lo + r_n_lo + r_nu_lo;
  }
  double r_hi() const {
    return 2.0 * sigma_theta_hi * sigma_theta_hi * r_v_hi + r_n_hi + r_nu_hi;
  }
};

inline void validate(const BoundConstants& bc) {
  auto ordered = [](double lo, double hi) { return lo <= hi; };
  if (!(bc.f_hi > 0.0 && bc.h_lo > 0.0 && bc.beta_lo > 0.0 &&
        bc.theta_lo > 0.0 && bc.q_lo > 0.0 && bc.r_lo() > 0.0)) {
    throw InvalidBounds(
        "bound constants: f_hi, h_lo, beta_lo, theta_lo, q_lo and the "
        "composite r_lo must all be positive");
  }
  if (!(bc.delta_eps_hi >= 0.0 && bc.delta_eps_hi < 1.0)) {
    throw InvalidBounds("bound constants: delta_eps_hi must lie in [0, 1)");
  }
  if (!(ordered(bc.f_lo, bc.f_hi) && ordered(bc.h_lo, bc.h_hi) &&
        ordered(bc.beta_lo, bc.beta_hi) && ordered(bc.theta_lo, bc.theta_hi) &&
        ordered(bc.q_lo, bc.q_hi) && ordered(bc.r_v_lo, bc.r_v_hi) &&
        ordered(bc.r_n_lo, bc.r_n_hi) && ordered(bc.r_nu_lo, bc.r_nu_hi) &&
        ordered(bc.sigma_theta_lo, bc.sigma_theta_hi))) {
    throw InvalidBounds("bound constants: every lower bound must not exceed "
                        "its upper bound");
  }
}

/// Heuristic defaults derived from a scenario.  Fading bounds come from
/// Rayleigh quantiles at 1e-6 / 1-1e-6, the measurement bounds from the
/// deployment geometry, and the linearization gains are set to 1 because
/// they are unobservable.
inline BoundConstants bounds_from_scenario(const ScenarioConfig& cfg) {
  BoundConstants bc;
  const Mat6 f = transition_matrix(cfg.motion_params());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
  bc.f_hi = svd.singularValues().maxCoeff();
  bc.f_lo = svd.singularValues().minCoeff();
  const auto& box = cfg.placement.box_m;
  bc.h_lo = 1.0;
  bc.h_hi = std::sqrt(box[0] * box[0] + box[1] * box[1] + box[2] * box[2]);
  bc.beta_lo = bc.beta_hi = 1.0;
  const double s_lo =
      *std::min_element(cfg.sigma_theta.begin(), cfg.sigma_theta.end());
  const double s_hi =
      *std::max_element(cfg.sigma_theta.begin(), cfg.sigma_theta.end());
  bc.sigma_theta_lo = s_lo;
  bc.sigma_theta_hi = s_hi;
  bc.theta_lo = rayleigh_quantile(s_lo, 1e-6);
  bc.theta_hi = rayleigh_quantile(s_hi, 1.0 - 1e-6);
  {
    Eigen::SelfAdjointEigenSolver<Mat6> es(
        process_noise_cov(cfg.motion_params()));
    bc.q_lo = es.eigenvalues().minCoeff();
    bc.q_hi = es.eigenvalues().maxCoeff();
  }
  bc.r_v_lo = *std::min_element(cfg.r_v_m2.begin(), cfg.r_v_m2.end());
  bc.r_v_hi = *std::max_element(cfg.r_v_m2.begin(), cfg.r_v_m2.end());
  bc.r_n_lo = *std::min_element(cfg.r_n_m2.begin(), cfg.r_n_m2.end());
  bc.r_n_hi = *std::max_element(cfg.r_n_m2.begin(), cfg.r_n_m2.end());
  bc.delta_eps_hi =
      *std::max_element(cfg.delta_eps.begin(), cfg.delta_eps.end());
  double nu_lo = std::numeric_limits<double>::infinity();
  double nu_hi = 0.0;
  for (int i = 0; i < cfg.num_nodes; ++i) {
    const FadingParams fp = cfg.fading_params(i);
    const double eps_ms =
        truncated_normal_second_moment(fp.sigma_eps, fp.delta_eps);
    const double base = 2.0 * fp.sigma_theta * fp.sigma_theta * eps_ms;
    nu_lo = std::min(nu_lo, base * bc.h_lo * bc.h_lo);
    nu_hi = std::max(nu_hi, base * bc.h_hi * bc.h_hi);
  }
  bc.r_nu_lo = nu_lo;
  bc.r_nu_hi = nu_hi;
  return bc;
}

/// Analytic covariance band:
///   p_lo = ( 1/q_lo + (1 + delta_eps_hi)^2 N h_hi^2 beta_hi^2 theta_hi^2
///            / r_lo )^-1,
///   p_hi = h_hi^2 r_hi / ( (1 - delta_eps_hi)^2 h_lo^4 beta_lo^2
///          theta_lo^2 ).
/// Throws InvalidBounds when the constants are inconsistent (p_lo > p_hi).
inline std::pair<double, double> covariance_bounds(const BoundConstants& bc,
                                                   int num_nodes) {
  validate(bc);
  if (num_nodes < 1) {
    throw InvalidBounds("covariance_bounds: num_nodes must be >= 1");
  }
  const double one_plus = 1.0 + bc.delta_eps_hi;
  const double one_minus = 1.0 - bc.delta_eps_hi;
  const double p_lo =
      1.0 / (1.0 / bc.q_lo + one_plus * one_plus *
                                 static_cast<double>(num_nodes) * bc.h_hi *
                                 bc.h_hi * bc.beta_hi * bc.beta_hi *
                                 bc.theta_hi * bc.theta_hi / bc.r_lo());
  const double p_hi =
      bc.h_hi * bc.h_hi * bc.r_hi() /
      (one_minus * one_minus * bc.h_lo * bc.h_lo * bc.h_lo * bc.h_lo *
       bc.beta_lo * bc.beta_lo * bc.theta_lo * bc.theta_lo);
  if (p_lo > p_hi) {
    throw InvalidBounds("covariance_bounds: inconsistent constants give "
                        "p_lo = " + std::to_string(p_lo) + " > p_hi = " +
                        std::to_string(p_hi));
  }
  return {p_lo, p_hi};
}

/// Per-step verdicts for the weight-drift stability condition.
enum class MarginStatus { Pass = 0, Fail = 1, Indeterminate = 2 };

struct StabilityReport {
  double threshold = 0.0;             ///< 1 + q_lo / (f_hi^2 p_hi)
  std::vector<double> ratio;          ///< max_j c_{k+1}(j) / c_k(j)
  std::vector<MarginStatus> status;   ///< one per ratio entry
  std::vector<bool> pf_unique;        ///< one per input matrix
  int indeterminate_count = 0;
};

/// Drift of the stationary weight vector across consecutive consensus
/// matrices, compared against the analytic threshold.  A step whose
/// stationary vector cannot be computed (no convergence, non-unique, or a
/// vanishing component) is marked indeterminate rather than failing.
inline StabilityReport stability_margin(
    const std::vector<Eigen::MatrixXd>& c_seq, const BoundConstants& bc) {
  StabilityReport report;
  if (c_seq.empty()) return report;
  const int n = static_cast<int>(c_seq.front().rows());
  const auto [p_lo, p_hi] = covariance_bounds(bc, n);
  (void)p_lo;
  report.threshold = 1.0 + bc.q_lo / (bc.f_hi * bc.f_hi * p_hi);

  std::vector<Eigen::VectorXd> pf(c_seq.size());
  std::vector<bool> ok(c_seq.size(), false);
  report.pf_unique.assign(c_seq.size(), false);
  for (std::size_t k = 0; k < c_seq.size(); ++k) {
    try {
      PfVector r = pf_left_eigenvector(c_seq[k]);
      pf[k] = r.v;
      ok[k] = r.unique;
      report.pf_unique[k] = r.unique;
    } catch (const Error&) {
      ok[k] = false;
    }
  }
  report.ratio.resize(c_seq.size() - 1);
  report.status.resize(c_seq.size() - 1);
  for (std::size_t k = 0; k + 1 < c_seq.size(); ++k) {
    if (!ok[k] || !ok[k + 1] || pf[k].minCoeff() <= 1e-300) {
      report.ratio[k] = std::numeric_limits<double>::quiet_NaN();
      report.status[k] = MarginStatus::Indeterminate;
      ++report.indeterminate_count;
      continue;
    }
    report.ratio[k] = (pf[k + 1].array() / pf[k].array()).maxCoeff();
    report.status[k] = report.ratio[k] <= report.threshold
                           ? MarginStatus::Pass
                           : MarginStatus::Fail;
  }
  return report;
}

struct BandCheckReport {
  std::size_t total = 0;            ///< (node, step, run) triples examined
  double inside_fraction = 0.0;     ///< eigenvalues within [p_lo, p_hi]
  double positive_fraction = 0.0;   ///< smallest eigenvalue > 0
  double observed_min = std::numeric_limits<double>::infinity();
  double observed_max = 0.0;
};

/// Compare recorded covariance eigenvalue extremes against a band.  Each
/// entry pairs the smallest and largest eigenvalue of one node's covariance
/// at one step of one run.
inline BandCheckReport empirical_bound_check(
    const std::vector<std::pair<double, double>>& eig_extremes, double p_lo,
    double p_hi) {
  BandCheckReport report;
  report.total = eig_extremes.size();
  if (eig_extremes.empty()) return report;
  std::size_t inside = 0;
  std::size_t positive = 0;
  for (const auto& [lo, hi] : eig_extremes) {
    report.observed_min = std::min(report.observed_min, lo);
    report.observed_max = std::max(report.observed_max, hi);
    if (lo >= p_lo && hi <= p_hi) ++inside;
    if (lo > 0.0) ++positive;
  }
  report.inside_fraction =
      static_cast<double>(inside) / static_cast<double>(report.total);
  report.positive_fraction =
      static_cast<double>(positive) / static_cast<double>(report.total);
  return report;
}

}  // namespace dukf
