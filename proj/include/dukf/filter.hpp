#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dukf/channel.hpp"
#include "dukf/dynamics.hpp"
#include "dukf/errors.hpp"
#include "dukf/network.hpp"
#include "dukf/numerics.hpp"
#include "dukf/rng.hpp"

namespace dukf {

/// Which estimator runs on top of the shared physical simulation:
///  - Fc:  statistical channel compensation (uses the noisy channel estimate
///         theta_hat and inflates R with the channel-statistics terms),
///  - eFc: idealized compensation (uses the exact fading gain, no estimate-
///         error inflation term),
///  - nFc: fading-unaware baseline (pretends the channel is transparent).
enum class FilterVariant { Fc, eFc, nFc };

inline std::string to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::Fc: return "Fc";
    case FilterVariant::eFc: return "eFc";
    case FilterVariant::nFc: return "nFc";
  }
  return "?";
}

inline FilterVariant variant_from_string(const std::string& s) {
  if (s == "Fc") return FilterVariant::Fc;
  if (s == "eFc") return FilterVariant::eFc;
  if (s == "nFc") return FilterVariant::nFc;
  throw ConfigError("unknown filter variant '" + s +
                    "' (expected Fc, eFc or nFc)");
}

struct NodeEstimate {
  Eigen::VectorXd x;
  Eigen::MatrixXd p;
};

struct SigmaPointSet {
  Eigen::MatrixXd points;   ///< n x (2n+1), column 0 is the center
  Eigen::VectorXd weights;  ///< 2n+1, sums to 1
};

/// Additive information contribution of one measurement:
/// omega_mat = H^T R^-1 H, omega_vec = H^T R^-1 (z - z_hat).
struct InformationPair {
  Eigen::MatrixXd omega_mat;
  Eigen::VectorXd omega_vec;
};

/// Unscented weights: w_0 = kappa / (n + kappa), w_s = 1 / (2 (n + kappa)).
/// Requires n + kappa > 0.
inline Eigen::VectorXd sigma_weights(int n, double kappa) {
  const double denom = static_cast<double>(n) + kappa;
  if (!(denom > 0.0)) {
    throw InvalidScaling("sigma_weights: n + kappa must be positive, got " +
                         std::to_string(denom));
  }
  Eigen::VectorXd w(2 * n + 1);
  w(0) = kappa / denom;
  w.tail(2 * n).setConstant(0.5 / denom);
  return w;
}

/// 2n+1 symmetric sigma points: center plus x +- sqrt(n+kappa) * col_s(L)
/// with L the Cholesky factor of P.
inline SigmaPointSet sample_sigma_points(const NodeEstimate& est,
                                         double kappa) {
  const int n = static_cast<int>(est.x.size());
  SigmaPointSet out;
  out.weights = sigma_weights(n, kappa);
  const double scale = std::sqrt(static_cast<double>(n) + kappa);
  const Eigen::MatrixXd l = matrix_sqrt_psd(est.p);
  out.points.resize(n, 2 * n + 1);
  out.points.col(0) = est.x;
  for (int s = 0; s < n; ++s) {
    out.points.col(1 + s) = est.x + scale * l.col(s);
    out.points.col(1 + n + s) = est.x - scale * l.col(s);
  }
  return out;
}

struct Prediction {
  Eigen::VectorXd x;
  Eigen::MatrixXd p;
  SigmaPointSet points;  ///< propagated points, reused for the measurement
};

/// Time update: sample around the posterior, push every point through the
/// linear dynamics, and rebuild mean and covariance (plus process noise).
/// The propagated points are carried along; the measurement step reuses
/// them without resampling.
inline Prediction predict(const NodeEstimate& est, const Mat6& f,
                          const Mat6& q, double kappa) {
  SigmaPointSet pts = sample_sigma_points(est, kappa);
  Prediction out;
  out.points.weights = pts.weights;
  out.points.points.noalias() = f * pts.points;
  out.x.noalias() = out.points.points * pts.weights;
  const Eigen::MatrixXd centered = out.points.points.colwise() - out.x;
  out.p.noalias() =
      centered * pts.weights.asDiagonal() * centered.transpose();
  out.p += q;
  out.p = symmetrized(out.p);
  return out;
}

/// Measurement prediction: xi_s = theta_hat * h(point_s), z_hat = sum w xi.
/// Returns (z_hat, xi) with xi an m x (2n+1) matrix.
template <typename MeasFn>
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> predict_measurement(
    const SigmaPointSet& pts, MeasFn&& h, double theta_hat) {
  const int cols = static_cast<int>(pts.points.cols());
  Eigen::VectorXd first = h(pts.points.col(0));
  const int m = static_cast<int>(first.size());
  Eigen::MatrixXd xi(m, cols);
  xi.col(0) = theta_hat * first;
  for (int s = 1; s < cols; ++s) {
    xi.col(s) = theta_hat * h(pts.points.col(s));
  }
  Eigen::VectorXd z_hat = xi * pts.weights;
  return {std::move(z_hat), std::move(xi)};
}

struct InnovationCov {
  Eigen::MatrixXd p_zz;  ///< innovation covariance, includes the noise model
  Eigen::MatrixXd p_xz;  ///< state-measurement cross covariance
};

inline InnovationCov innovation_covariances(const SigmaPointSet& pts,
                                            const Eigen::MatrixXd& xi,
                                            const Eigen::VectorXd& x_pred,
                                            const Eigen::VectorXd& z_hat,
                                            const Eigen::MatrixXd& r_hat) {
  const Eigen::MatrixXd xc = pts.points.colwise() - x_pred;
  const Eigen::MatrixXd zc = xi.colwise() - z_hat;
  InnovationCov out;
  out.p_zz.noalias() = zc * pts.weights.asDiagonal() * zc.transpose();
  out.p_zz += r_hat;
  out.p_zz = symmetrized(out.p_zz);
  out.p_xz.noalias() = xc * pts.weights.asDiagonal() * zc.transpose();
  return out;
}

namespace detail {

/// Solve M * X = B for symmetric positive definite M, throwing the given
/// error type on factorization failure.
template <typename ErrorT>
inline Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& m,
                                 const Eigen::MatrixXd& b,
                                 const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) {
    throw ErrorT(std::string(what) + ": matrix of dim " +
                 std::to_string(m.rows()) + " is not positive definite");
  }
  return llt.solve(b);
}

}  // namespace detail

/// Rebuild the information contribution from the sigma-point statistics:
/// the statistically linearized observation matrix is H = P_xz^T P_pred^-1
/// and the equivalent measurement noise is R = P_zz - H P_xz, giving
///   omega_mat = H^T R^-1 H,  omega_vec = H^T R^-1 (z - z_hat).
/// This additive pair is what travels between nodes.
inline InformationPair information_pair(const Eigen::MatrixXd& p_pred,
                                        const InnovationCov& cov,
                                        const Eigen::VectorXd& z,
                                        const Eigen::VectorXd& z_hat) {
  // H^T = P_pred^-1 P_xz by symmetry of P_pred.
  const Eigen::MatrixXd h_t = detail::spd_solve<SingularCovariance>(
      p_pred, cov.p_xz, "information_pair(P_pred)");
  Eigen::MatrixXd r = cov.p_zz;
  r.noalias() -= cov.p_xz.transpose() * h_t;
  r = symmetrized(r);
  // r_inv_h = R^-1 H; reused for both halves of the pair.
  const Eigen::MatrixXd r_inv_h = detail::spd_solve<SingularInnovation>(
      r, h_t.transpose(), "information_pair(R)");
  InformationPair out;
  out.omega_mat.noalias() = h_t * r_inv_h;
  out.omega_mat = symmetrized(out.omega_mat);
  out.omega_vec.noalias() = r_inv_h.transpose() * (z - z_hat);
  return out;
}

/// Classic gain-form measurement update, kept as the reference the
/// information form must agree with:
///   K = P_xz P_zz^-1, x = x_pred + K (z - z_hat), P = P_pred - K P_zz K^T.
inline NodeEstimate gain_form_update(const Eigen::VectorXd& x_pred,
                                     const Eigen::MatrixXd& p_pred,
                                     const InnovationCov& cov,
                                     const Eigen::VectorXd& z,
                                     const Eigen::VectorXd& z_hat) {
  // K^T = P_zz^-1 P_xz^T.
  const Eigen::MatrixXd k_t = detail::spd_solve<SingularInnovation>(
      cov.p_zz, cov.p_xz.transpose(), "gain_form_update(P_zz)");
  NodeEstimate out;
  out.x = x_pred + k_t.transpose() * (z - z_hat);
  out.p = p_pred;
  out.p.noalias() -= k_t.transpose() * cov.p_zz * k_t;
  out.p = symmetrized(out.p);
  return out;
}

/// Fuse the node's own prediction with the delivered information pairs:
///   P^-1 = P_pred^-1 + sum_j gamma_j omega_mat_j,
///   x = x_pred + P * sum_j gamma_j omega_vec_j.
inline NodeEstimate local_fuse(const Eigen::VectorXd& x_pred,
                               const Eigen::MatrixXd& p_pred,
                               const std::vector<InformationPair>& pairs,
                               const std::vector<double>& gammas) {
  if (pairs.size() != gammas.size()) {
    throw Error("local_fuse: pairs/gammas size mismatch");
  }
  const int n = static_cast<int>(x_pred.size());
  Eigen::MatrixXd info = detail::spd_solve<SingularCovariance>(
      p_pred, Eigen::MatrixXd::Identity(n, n), "local_fuse(P_pred)");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    if (gammas[j] == 0.0) continue;
    info.noalias() += gammas[j] * pairs[j].omega_mat;
    rhs.noalias() += gammas[j] * pairs[j].omega_vec;
  }
  info = symmetrized(info);
  NodeEstimate out;
  out.p = detail::spd_solve<SingularCovariance>(
      info, Eigen::MatrixXd::Identity(n, n), "local_fuse(information)");
  out.p = symmetrized(out.p);
  out.x = x_pred + out.p * rhs;
  return out;
}

/// Convex diffusion of the delivered local posteriors with one row of the
/// consensus matrix.  Entries with zero weight are skipped entirely, so
/// estimates from nodes that never delivered are not even read.
inline NodeEstimate diffuse(const std::vector<NodeEstimate>& locals,
                            const Eigen::VectorXd& c_row) {
  if (static_cast<Eigen::Index>(locals.size()) != c_row.size()) {
    throw Error("diffuse: size mismatch between locals and weight row");
  }
  NodeEstimate out;
  bool first = true;
  for (Eigen::Index j = 0; j < c_row.size(); ++j) {
    const double w = c_row(j);
    if (w == 0.0) continue;
    if (first) {
      out.x = w * locals[j].x;
      out.p = w * locals[j].p;
      first = false;
    } else {
      out.x.noalias() += w * locals[j].x;
      out.p.noalias() += w * locals[j].p;
    }
  }
  if (first) {
    throw Error("diffuse: weight row is identically zero");
  }
  out.p = symmetrized(out.p);
  return out;
}

// ---------------------------------------------------------------------------
// One synchronous network step
// ---------------------------------------------------------------------------

struct NetworkStepInput {
  const Graph* graph = nullptr;
  const std::vector<SensorNode>* nodes = nullptr;
  Mat6 f = Mat6::Identity();
  Mat6 q = Mat6::Zero();
  double kappa = 0.0;
  const std::vector<FadingParams>* fading = nullptr;
  /// Per-link delivery probability, indexed (src, dst); only entries for
  /// actual graph edges are read.
  Eigen::MatrixXd link_q;
  FilterVariant variant = FilterVariant::Fc;
  std::uint64_t step = 0;  ///< 1-based step index, keys the random streams
};

struct NodeStepTelemetry {
  FadingSample fading;
  double z = 0.0;
  double z_hat = 0.0;
  double r_hat = 0.0;
};

struct StepTelemetry {
  Eigen::MatrixXd c;        ///< consensus matrix realized this step
  bool c_primitive = true;
  int attempts = 0;         ///< directed transmissions attempted, both rounds
  int deliveries = 0;
  std::vector<NodeStepTelemetry> node;
};

/// Advance every node one measurement + exchange + diffusion cycle.
///
/// The physical channel (fading draw, measurement noise, packet losses) is
/// identical for every variant because all randomness comes from purpose-
/// keyed streams that do not depend on the variant.  The variants differ
/// only in the gain the estimator applies to h and in the noise model R.
///
/// Round 1 ships information pairs, round 2 ships local posteriors; both
/// rounds draw their own per-link delivery indicators.  Any error raised by
/// the per-node numerics is rethrown with "step S node I" context.
inline std::vector<NodeEstimate> step_network(
    const std::vector<NodeEstimate>& prev, const Vec6& truth,
    const NetworkStepInput& in, const StreamFactory& streams,
    StepTelemetry* telemetry) {
  const Graph& g = *in.graph;
  const std::vector<SensorNode>& nodes = *in.nodes;
  const int n = g.size();

  // Per-link delivery indicators for both exchange rounds.
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd gamma_plus = Eigen::MatrixXd::Zero(n, n);
  int attempts = 0;
  int deliveries = 0;
  for (int src = 0; src < n; ++src) {
    for (int dst : g.out_neighbors(src)) {
      if (dst == src) continue;
      RngStream g1 = streams.link_stream(Purpose::LinkGamma, in.step,
                                         static_cast<std::uint64_t>(src),
                                         static_cast<std::uint64_t>(dst));
      RngStream g2 = streams.link_stream(Purpose::LinkGammaPlus, in.step,
                                         static_cast<std::uint64_t>(src),
                                         static_cast<std::uint64_t>(dst));
      gamma(src, dst) = sample_link(in.link_q(src, dst), g1);
      gamma_plus(src, dst) = sample_link(in.link_q(src, dst), g2);
      attempts += 2;
      deliveries += static_cast<int>(gamma(src, dst)) +
                    static_cast<int>(gamma_plus(src, dst));
    }
  }

  if (telemetry != nullptr) {
    telemetry->attempts = attempts;
    telemetry->deliveries = deliveries;
    telemetry->node.assign(static_cast<std::size_t>(n), NodeStepTelemetry{});
  }

  // Phase 1: every node predicts, measures through the channel, and forms
  // its information pair from the snapshot of the previous estimates.
  std::vector<Prediction> preds(n);
  std::vector<InformationPair> own_pair(n);
  for (int i = 0; i < n; ++i) {
    try {
      preds[i] = predict(prev[i], in.f, in.q, in.kappa);

      const FadingParams& fp = (*in.fading)[i];
      RngStream theta_rng = streams.node_stream(Purpose::FadingTheta, in.step,
                                                static_cast<std::uint64_t>(i));
      RngStream eps_rng = streams.node_stream(Purpose::FadingEps, in.step,
                                              static_cast<std::uint64_t>(i));
      const FadingSample fs = sample_fading(fp, theta_rng, eps_rng);

      RngStream meas_rng = streams.node_stream(Purpose::MeasNoise, in.step,
                                               static_cast<std::uint64_t>(i));
      const double y = ideal_measurement(truth, nodes[i], meas_rng);
      RngStream add_rng = streams.node_stream(Purpose::AddNoise, in.step,
                                              static_cast<std::uint64_t>(i));
      const double z = apply_fading(y, fs, nodes[i].r_n, add_rng);

      double theta_used = 1.0;
      double r_hat = nodes[i].r_v + nodes[i].r_n;
      const double theta_ms = 2.0 * fp.sigma_theta * fp.sigma_theta;
      switch (in.variant) {
        case FilterVariant::Fc: {
          theta_used = fs.theta_hat;
          const double h_pred = range_measurement(preds[i].x, nodes[i]);
          r_hat = fading_noise_cov(fp, nodes[i].r_v, nodes[i].r_n, h_pred);
          break;
        }
        case FilterVariant::eFc:
          theta_used = fs.theta;
          r_hat = theta_ms * nodes[i].r_v + nodes[i].r_n;
          break;
        case FilterVariant::nFc:
          break;
      }

      auto h_fn = [&](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(
            1, range_measurement(Vec6(x), nodes[i]));
      };
      auto [z_hat, xi] =
          predict_measurement(preds[i].points, h_fn, theta_used);
      const Eigen::MatrixXd r_mat = Eigen::MatrixXd::Constant(1, 1, r_hat);
      const InnovationCov cov = innovation_covariances(
          preds[i].points, xi, preds[i].x, z_hat, r_mat);
      const Eigen::VectorXd z_vec = Eigen::VectorXd::Constant(1, z);
      own_pair[i] = information_pair(preds[i].p, cov, z_vec, z_hat);

      if (telemetry != nullptr) {
        telemetry->node[i] = NodeStepTelemetry{fs, z, z_hat(0), r_hat};
      }
    } catch (...) {
      rethrow_with_context("step " + std::to_string(in.step) + " node " +
                           std::to_string(i) + " (measurement): ");
    }
  }

  // Round 1: fuse own pair with the pairs that arrived.
  std::vector<NodeEstimate> local(n);
  for (int i = 0; i < n; ++i) {
    try {
      std::vector<InformationPair> pairs;
      std::vector<double> gammas;
      pairs.reserve(g.in_neighbors(i).size());
      for (int j : g.in_neighbors(i)) {
        pairs.push_back(own_pair[j]);
        gammas.push_back(j == i ? 1.0 : gamma(j, i));
      }
      local[i] = local_fuse(preds[i].x, preds[i].p, pairs, gammas);
    } catch (...) {
      rethrow_with_context("step " + std::to_string(in.step) + " node " +
                           std::to_string(i) + " (fusion): ");
    }
  }

  // Round 2: diffuse the delivered local posteriors with Metropolis weights
  // built from this round's deliveries.  gamma_plus is filled (src, dst) but
  // the weight builder wants (receiver, sender), hence the transpose.
  const Eigen::MatrixXd c = metropolis_weights(g, gamma_plus.transpose());
  std::vector<NodeEstimate> out(n);
  for (int i = 0; i < n; ++i) {
    try {
      out[i] = diffuse(local, c.row(i).transpose());
    } catch (...) {
      rethrow_with_context("step " + std::to_string(in.step) + " node " +
                           std::to_string(i) + " (diffusion): ");
    }
  }

  if (telemetry != nullptr) {
    telemetry->c = c;
    telemetry->c_primitive = check_primitivity(c);
  }
  return out;
}

}  // namespace dukf
