#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dukf/channel.hpp"
#include "dukf/diagnostics.hpp"
#include "dukf/dynamics.hpp"
#include "dukf/errors.hpp"
#include "dukf/filter.hpp"
#include "dukf/network.hpp"
#include "dukf/rng.hpp"
#include "dukf/scenario.hpp"

namespace dukf {

struct RunFailure {
  int run = -1;
  std::uint64_t step = 0;
  std::string message;
};

/// Raw telemetry of one Monte Carlo run of one filter variant.  Matrices are
/// step-major: row k-1 belongs to step k (steps are 1-based, step 0 is the
/// initial condition and is only present in `truth`).
struct RunResult {
  int run = 0;
  bool failed = false;
  RunFailure failure;
  Eigen::MatrixXd estimates;    ///< K x (N*6), node-major segments of 6
  Eigen::MatrixXd pos_err_sq;   ///< K x N
  Eigen::MatrixXd vel_err_sq;   ///< K x N
  Eigen::MatrixXd eig_min;      ///< K x N, smallest covariance eigenvalue
  Eigen::MatrixXd eig_max;      ///< K x N
  std::vector<double> energy_j;     ///< K, per step
  std::vector<int> attempts;        ///< K, directed transmissions attempted
  std::vector<char> c_primitive;    ///< K
  std::vector<Vec6> truth;          ///< K+1 including step 0
  std::vector<Eigen::MatrixXd> c_matrices;  ///< kept only on request
};

namespace detail {

/// Per-step link matrices: delivery probability and transmit power (W),
/// indexed (src, dst).  Only graph edges are filled.
inline void build_link_matrices(const ScenarioConfig& cfg, const Graph& graph,
                                const ChannelParams& cp,
                                const StreamFactory& streams,
                                std::uint64_t step, Eigen::MatrixXd& q,
                                Eigen::MatrixXd& u_w) {
  const int n = graph.size();
  q.setZero(n, n);
  u_w.setZero(n, n);
  const auto& lk = cfg.links;
  double fixed_q = 0.0;
  double fixed_u = 0.0;
  switch (lk.mode) {
    case LinkMode::QFixed:
      fixed_q = lk.q;
      fixed_u = lk.energy_power_mw.value_or(0.0) * 1e-3;
      break;
    case LinkMode::QRange:
      fixed_u = lk.energy_power_mw.value_or(0.0) * 1e-3;
      break;
    case LinkMode::UFixed:
      fixed_u = lk.power_mw * 1e-3;
      fixed_q = packet_success_prob(fixed_u, cp);
      break;
    case LinkMode::URange:
      break;
  }
  for (int src = 0; src < n; ++src) {
    for (int dst : graph.out_neighbors(src)) {
      if (dst == src) continue;
      switch (lk.mode) {
        case LinkMode::QFixed:
        case LinkMode::UFixed:
          q(src, dst) = fixed_q;
          u_w(src, dst) = fixed_u;
          break;
        case LinkMode::QRange: {
          RngStream s = streams.link_stream(Purpose::LinkQ, step,
                                            static_cast<std::uint64_t>(src),
                                            static_cast<std::uint64_t>(dst));
          q(src, dst) = s.uniform(lk.q_range[0], lk.q_range[1]);
          u_w(src, dst) = fixed_u;
          break;
        }
        case LinkMode::URange: {
          RngStream s = streams.link_stream(Purpose::LinkQ, step,
                                            static_cast<std::uint64_t>(src),
                                            static_cast<std::uint64_t>(dst));
          const double u =
              s.uniform(lk.power_range_mw[0], lk.power_range_mw[1]) * 1e-3;
          q(src, dst) = packet_success_prob(u, cp);
          u_w(src, dst) = u;
          break;
        }
      }
    }
  }
}

}  // namespace detail

/// Execute one run of one variant.  All randomness is keyed by
/// (master_seed, run, step, ...), never by the variant, so different
/// variants of the same run see identical noise, fading, and packet losses.
/// A numerics failure mid-run flags the result instead of throwing.
inline RunResult run_single(const ScenarioConfig& cfg, FilterVariant variant,
                            int run, bool keep_c_matrices = false) {
  const int n = cfg.num_nodes;
  const int steps = cfg.duration_steps;
  RunResult rr;
  rr.run = run;
  rr.estimates.setZero(steps, n * 6);
  rr.pos_err_sq.setZero(steps, n);
  rr.vel_err_sq.setZero(steps, n);
  rr.eig_min.setZero(steps, n);
  rr.eig_max.setZero(steps, n);
  rr.energy_j.assign(static_cast<std::size_t>(steps), 0.0);
  rr.attempts.assign(static_cast<std::size_t>(steps), 0);
  rr.c_primitive.assign(static_cast<std::size_t>(steps), 0);
  rr.truth.reserve(static_cast<std::size_t>(steps) + 1);

  const std::vector<Eigen::Vector3d> positions =
      positions_for_run(cfg, static_cast<std::uint64_t>(run));
  const Graph graph = build_graph(cfg, positions);
  const std::vector<SensorNode> nodes = sensor_nodes(cfg, positions);
  std::vector<FadingParams> fading(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    fading[static_cast<std::size_t>(i)] = cfg.fading_params(i);
  }
  const MotionParams motion = cfg.motion_params();
  const ChannelParams cp = cfg.channel_params();
  const StreamFactory streams(cfg.master_seed, static_cast<std::uint64_t>(run));

  NetworkStepInput in;
  in.graph = &graph;
  in.nodes = &nodes;
  in.f = transition_matrix(motion);
  in.q = process_noise_cov(motion);
  in.kappa = cfg.kappa;
  in.fading = &fading;
  in.variant = variant;

  std::vector<NodeEstimate> est(
      static_cast<std::size_t>(n),
      NodeEstimate{cfg.estimate0, cfg.p0});
  Vec6 truth = cfg.truth0;
  rr.truth.push_back(truth);

  Eigen::MatrixXd link_q, link_u;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  for (int k = 1; k <= steps; ++k) {
    RngStream process = streams.node_stream(Purpose::ProcessNoise,
                                            static_cast<std::uint64_t>(k), 0);
    truth = propagate_truth(truth, motion, process);
    rr.truth.push_back(truth);

    detail::build_link_matrices(cfg, graph, cp, streams,
                                static_cast<std::uint64_t>(k), link_q, link_u);
    in.link_q = link_q;
    in.step = static_cast<std::uint64_t>(k);

    StepTelemetry tel;
    try {
      est = step_network(est, truth, in, streams, &tel);
    } catch (const std::exception& e) {
      rr.failed = true;
      rr.failure = RunFailure{run, static_cast<std::uint64_t>(k), e.what()};
      return rr;
    }

    double e_step = 0.0;
    for (int src = 0; src < n; ++src) {
      for (int dst : graph.out_neighbors(src)) {
        if (dst == src) continue;
        e_step += 2.0 * transmission_energy(link_u(src, dst), cfg.packet_bits,
                                            cfg.bit_rate_bps);
      }
    }
    const int row = k - 1;
    rr.energy_j[static_cast<std::size_t>(row)] = e_step;
    rr.attempts[static_cast<std::size_t>(row)] = tel.attempts;
    rr.c_primitive[static_cast<std::size_t>(row)] = tel.c_primitive ? 1 : 0;
    if (keep_c_matrices) rr.c_matrices.push_back(tel.c);

    const Eigen::Vector3d tp = state_position(truth);
    const Eigen::Vector3d tv = state_velocity(truth);
    for (int i = 0; i < n; ++i) {
      const auto& e_i = est[static_cast<std::size_t>(i)];
      rr.estimates.row(row).segment(i * 6, 6) = e_i.x.transpose();
      const Eigen::Vector3d ep(e_i.x(0), e_i.x(2), e_i.x(4));
      const Eigen::Vector3d ev(e_i.x(1), e_i.x(3), e_i.x(5));
      rr.pos_err_sq(row, i) = (ep - tp).squaredNorm();
      rr.vel_err_sq(row, i) = (ev - tv).squaredNorm();
      es.compute(e_i.p, Eigen::EigenvaluesOnly);
      rr.eig_min(row, i) = es.eigenvalues().minCoeff();
      rr.eig_max(row, i) = es.eigenvalues().maxCoeff();
    }
  }
  return rr;
}

/// Aggregated metrics of one variant across all runs.
struct VariantResult {
  FilterVariant variant = FilterVariant::Fc;
  std::vector<RunResult> runs;          ///< indexed by run id
  std::vector<double> rmse_p;           ///< K values, failed runs excluded
  std::vector<double> rmse_v;           ///< K values
  double rmse_p_steady = 0.0;           ///< mean of last-window rmse_p
  double rmse_v_steady = 0.0;
  std::vector<double> run_steady_rmse_p;  ///< per run, NaN when failed
  double steady_se_p = 0.0;             ///< across-run standard error
  double energy_total_j_mean = 0.0;     ///< mean per-run total energy
  double energy_rate_j_per_s = 0.0;
  long long attempts_total = 0;         ///< summed over successful runs
  int failed_count = 0;
  std::vector<RunFailure> failures;
  double eig_min_overall = std::numeric_limits<double>::infinity();
  double eig_max_first_window = 0.0;
  double eig_max_last_window = 0.0;
  int nonprimitive_steps = 0;           ///< across successful runs
  std::optional<BandCheckReport> band;
  std::optional<StabilityReport> margin_run0;
};

struct ExperimentResult {
  ScenarioConfig cfg;
  std::vector<Eigen::Vector3d> positions_run0;
  Graph graph_run0;
  bool graph_connected = false;
  std::optional<BoundConstants> bounds;  ///< unset when scenario degenerate
  std::optional<std::pair<double, double>> p_band;
  std::vector<VariantResult> variants;
  bool failure_threshold_exceeded = false;
};

namespace detail {

inline void aggregate_variant(const ScenarioConfig& cfg,
                              const std::optional<std::pair<double, double>>&
                                  p_band,
                              const std::optional<BoundConstants>& bounds,
                              VariantResult& vr) {
  const int steps = cfg.duration_steps;
  const int n = cfg.num_nodes;
  const int w = cfg.steady_state_window;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  vr.rmse_p.assign(static_cast<std::size_t>(steps), 0.0);
  vr.rmse_v.assign(static_cast<std::size_t>(steps), 0.0);
  vr.run_steady_rmse_p.assign(vr.runs.size(), nan);
  vr.failed_count = 0;
  vr.failures.clear();
  vr.attempts_total = 0;

  std::vector<double> sum_p(static_cast<std::size_t>(steps), 0.0);
  std::vector<double> sum_v(static_cast<std::size_t>(steps), 0.0);
  int ok_count = 0;
  double energy_sum = 0.0;
  std::vector<std::pair<double, double>> eig_pairs;

  for (std::size_t r = 0; r < vr.runs.size(); ++r) {
    const RunResult& rr = vr.runs[r];
    if (rr.failed) {
      ++vr.failed_count;
      vr.failures.push_back(rr.failure);
      continue;
    }
    ++ok_count;
    double run_energy = 0.0;
    for (int k = 0; k < steps; ++k) {
      sum_p[static_cast<std::size_t>(k)] += rr.pos_err_sq.row(k).sum();
      sum_v[static_cast<std::size_t>(k)] += rr.vel_err_sq.row(k).sum();
      run_energy += rr.energy_j[static_cast<std::size_t>(k)];
      vr.attempts_total += rr.attempts[static_cast<std::size_t>(k)];
      if (!rr.c_primitive[static_cast<std::size_t>(k)]) {
        ++vr.nonprimitive_steps;
      }
      const double lo = rr.eig_min.row(k).minCoeff();
      const double hi = rr.eig_max.row(k).maxCoeff();
      vr.eig_min_overall = std::min(vr.eig_min_overall, lo);
      if (k < w) {
        vr.eig_max_first_window = std::max(vr.eig_max_first_window, hi);
      }
      if (k >= steps - w) {
        vr.eig_max_last_window = std::max(vr.eig_max_last_window, hi);
      }
      for (int i = 0; i < n; ++i) {
        eig_pairs.emplace_back(rr.eig_min(k, i), rr.eig_max(k, i));
      }
    }
    energy_sum += run_energy;
    const double tail =
        rr.pos_err_sq.bottomRows(w).sum() / static_cast<double>(w * n);
    vr.run_steady_rmse_p[r] = std::sqrt(tail);
  }

  const double denom = static_cast<double>(ok_count) * static_cast<double>(n);
  for (int k = 0; k < steps; ++k) {
    if (ok_count > 0) {
      vr.rmse_p[static_cast<std::size_t>(k)] =
          std::sqrt(sum_p[static_cast<std::size_t>(k)] / denom);
      vr.rmse_v[static_cast<std::size_t>(k)] =
          std::sqrt(sum_v[static_cast<std::size_t>(k)] / denom);
    } else {
      vr.rmse_p[static_cast<std::size_t>(k)] = nan;
      vr.rmse_v[static_cast<std::size_t>(k)] = nan;
    }
  }

  auto window_mean = [&](const std::vector<double>& series) {
    double s = 0.0;
    for (int k = steps - w; k < steps; ++k) {
      s += series[static_cast<std::size_t>(k)];
    }
    return s / static_cast<double>(w);
  };
  vr.rmse_p_steady = ok_count > 0 ? window_mean(vr.rmse_p) : nan;
  vr.rmse_v_steady = ok_count > 0 ? window_mean(vr.rmse_v) : nan;

  // Across-run standard error of the per-run steady statistic.
  if (ok_count > 1) {
    double mean = 0.0;
    for (double x : vr.run_steady_rmse_p) {
      if (!std::isnan(x)) mean += x;
    }
    mean /= static_cast<double>(ok_count);
    double ss = 0.0;
    for (double x : vr.run_steady_rmse_p) {
      if (!std::isnan(x)) ss += (x - mean) * (x - mean);
    }
    vr.steady_se_p = std::sqrt(ss / static_cast<double>(ok_count - 1)) /
                     std::sqrt(static_cast<double>(ok_count));
  } else {
    vr.steady_se_p = 0.0;
  }

  if (ok_count > 0) {
    vr.energy_total_j_mean = energy_sum / static_cast<double>(ok_count);
    vr.energy_rate_j_per_s =
        vr.energy_total_j_mean /
        (static_cast<double>(steps) * cfg.period_s);
  } else {
    vr.energy_total_j_mean = nan;
    vr.energy_rate_j_per_s = nan;
  }

  if (p_band.has_value()) {
    vr.band = empirical_bound_check(eig_pairs, p_band->first, p_band->second);
  }
  if (bounds.has_value() && !vr.runs.empty() && !vr.runs.front().failed &&
      !vr.runs.front().c_matrices.empty()) {
    try {
      vr.margin_run0 = stability_margin(vr.runs.front().c_matrices, *bounds);
    } catch (const Error&) {
      vr.margin_run0.reset();
    }
  }
}

}  // namespace detail

/// Run every configured variant for `cfg.runs` Monte Carlo runs.  Work is
/// distributed over `workers` threads; each (variant, run) cell writes into
/// its own slot and aggregation walks the slots in run-index order, so the
/// result is identical for any worker count.
inline ExperimentResult run_monte_carlo(const ScenarioConfig& cfg,
                                        int workers = 1) {
  validate(cfg);
  ExperimentResult ex;
  ex.cfg = cfg;
  ex.positions_run0 = positions_for_run(cfg, 0);
  ex.graph_run0 = build_graph(cfg, ex.positions_run0);
  ex.graph_connected = ex.graph_run0.connected();
  try {
    BoundConstants bc = bounds_from_scenario(cfg);
    ex.p_band = covariance_bounds(bc, cfg.num_nodes);
    ex.bounds = bc;
  } catch (const Error&) {
    // Degenerate scenario (e.g. no process noise): diagnostics unavailable.
    ex.bounds.reset();
    ex.p_band.reset();
  }

  const int m = cfg.runs;
  const int total = m * static_cast<int>(cfg.variants.size());
  ex.variants.resize(cfg.variants.size());
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    ex.variants[vi].variant = cfg.variants[vi];
    ex.variants[vi].runs.resize(static_cast<std::size_t>(m));
  }

  const bool keep_c = cfg.stability_diagnostics;
  std::atomic<int> next{0};
  auto worker_fn = [&]() {
    for (;;) {
      const int idx = next.fetch_add(1);
      if (idx >= total) return;
      const std::size_t vi = static_cast<std::size_t>(idx) /
                             static_cast<std::size_t>(m);
      const int run = idx % m;
      RunResult& slot = ex.variants[vi].runs[static_cast<std::size_t>(run)];
      try {
        slot = run_single(cfg, cfg.variants[vi], run, keep_c && run == 0);
      } catch (const std::exception& e) {
        slot.run = run;
        slot.failed = true;
        slot.failure = RunFailure{run, 0, e.what()};
      }
    }
  };

  const int thread_count = std::max(1, std::min(workers, total));
  if (thread_count == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker_fn);
    for (auto& t : pool) t.join();
  }

  for (auto& vr : ex.variants) {
    detail::aggregate_variant(cfg, ex.p_band, ex.bounds, vr);
    const double failure_rate = static_cast<double>(vr.failed_count) /
                                static_cast<double>(std::max(1, m));
    if (failure_rate > cfg.failure_rate_threshold) {
      ex.failure_threshold_exceeded = true;
    }
  }
  return ex;
}

/// Energy change rate between two experiments of the same topology.  When
/// the attempted-transmission counts match, the energy ratio reduces exactly
/// to the power ratio and the change rate is computed in that reduced form
/// (bit-exact in the powers); otherwise it falls back to the ratio of mean
/// measured energies.
struct EnergyComparison {
  bool counts_match = false;
  double change_rate = 0.0;  ///< e.g. -0.35 for a 35% reduction
  long long attempts = 0;
  long long attempts_ref = 0;
};

inline EnergyComparison compare_energy(const VariantResult& level,
                                       double power_mw,
                                       const VariantResult& reference,
                                       double reference_power_mw) {
  EnergyComparison out;
  out.attempts = level.attempts_total;
  out.attempts_ref = reference.attempts_total;
  out.counts_match = level.attempts_total == reference.attempts_total;
  if (out.counts_match) {
    out.change_rate = power_mw / reference_power_mw - 1.0;
  } else {
    out.change_rate =
        level.energy_total_j_mean / reference.energy_total_j_mean - 1.0;
  }
  return out;
}

}  // namespace dukf
