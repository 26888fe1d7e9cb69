#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dukf/diagnostics.hpp"
#include "dukf/errors.hpp"
#include "dukf/scenario.hpp"
#include "dukf/sim.hpp"

namespace dukf::cli {

namespace fs = std::filesystem;

// Exit-code contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitExperimentFailed = 3;
inline constexpr int kExitVerifyFailed = 4;

/// Shortest round-trip decimal rendering; identical bytes on every run.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0.0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

struct CommonOpts {
  std::string scenario_path;              ///< empty = built-in default
  std::vector<std::string> overrides;     ///< KEY=VALUE, dotted keys
  std::string out_dir = ".";
  int workers = 1;
  std::string format = "both";            ///< csv | json | both
  bool telemetry = false;
};

// ---------------------------------------------------------------------------
// Scenario loading with overrides
// ---------------------------------------------------------------------------

/// Apply one KEY=VALUE override to the scenario JSON tree.  The key is a
/// dotted path; the value is parsed as JSON when possible (numbers, arrays,
/// objects, booleans) and treated as a bare string otherwise.
inline void apply_override(json& tree, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + kv + "' is not KEY=VALUE");
  }
  std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare string
  }
  std::string pointer = "/";
  for (char c : key) pointer += (c == '.') ? '/' : c;
  try {
    tree[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("cannot apply override '" + kv + "': " + e.what());
  }
}

inline ScenarioConfig load_with_overrides(const CommonOpts& opts) {
  json tree;
  if (opts.scenario_path.empty()) {
    tree = to_json(reference_scenario());
  } else {
    std::ifstream in(opts.scenario_path);
    if (!in) {
      throw ConfigError("cannot open scenario file '" + opts.scenario_path +
                        "'");
    }
    try {
      in >> tree;
    } catch (const json::exception& e) {
      throw ConfigError("scenario file '" + opts.scenario_path +
                        "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& kv : opts.overrides) apply_override(tree, kv);
  return scenario_from_json(tree);
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline void write_text(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "."
                                                    : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
}

/// One-line config echo embedded at the top of every CSV; carries the full
/// resolved scenario including the master seed.
inline std::string config_comment(const ScenarioConfig& cfg) {
  return "# config: " + to_json(cfg).dump() + "\n";
}

inline json margin_to_json(const StabilityReport& m) {
  json out;
  out["threshold"] = m.threshold;
  json ratios = json::array();
  int pass = 0;
  int fail = 0;
  double ratio_max = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m.ratio.size(); ++k) {
    ratios.push_back(m.ratio[k]);
    if (m.status[k] == MarginStatus::Pass) ++pass;
    if (m.status[k] == MarginStatus::Fail) ++fail;
    if (!std::isnan(m.ratio[k])) ratio_max = std::max(ratio_max, m.ratio[k]);
  }
  out["ratios"] = ratios;
  out["pass_steps"] = pass;
  out["fail_steps"] = fail;
  out["indeterminate_steps"] = m.indeterminate_count;
  out["ratio_max"] =
      std::isinf(ratio_max) ? json() : json(ratio_max);
  return out;
}

inline json summary_json(const ExperimentResult& ex,
                         const std::string& command) {
  json j;
  j["schema"] = 1;
  j["command"] = command;
  j["scenario"] = to_json(ex.cfg);
  json adjacency = json::array();
  for (int i = 0; i < ex.graph_run0.size(); ++i) {
    json nbrs = json::array();
    for (int v : ex.graph_run0.out_neighbors(i)) {
      if (v != i) nbrs.push_back(v);
    }
    adjacency.push_back(nbrs);
  }
  j["graph"] = {{"connected", ex.graph_connected},
                {"directed_edges", ex.graph_run0.directed_edge_count()},
                {"adjacency", adjacency}};
  if (ex.p_band.has_value()) {
    j["diagnostics"] = {{"p_lo", ex.p_band->first},
                        {"p_hi", ex.p_band->second}};
  } else {
    j["diagnostics"] = nullptr;
  }
  j["failure_threshold_exceeded"] = ex.failure_threshold_exceeded;
  json variants;
  for (const auto& vr : ex.variants) {
    json v;
    v["runs"] = static_cast<int>(vr.runs.size());
    v["failed_runs"] = vr.failed_count;
    json fails = json::array();
    for (const auto& f : vr.failures) {
      fails.push_back({{"run", f.run},
                       {"step", f.step},
                       {"message", f.message}});
    }
    v["failures"] = fails;
    v["rmse_p_steady"] = vr.rmse_p_steady;
    v["rmse_v_steady"] = vr.rmse_v_steady;
    v["steady_se_p"] = vr.steady_se_p;
    v["rmse_p_final"] = vr.rmse_p.empty() ? json() : json(vr.rmse_p.back());
    v["energy_total_j_mean"] = vr.energy_total_j_mean;
    v["energy_rate_j_per_s"] = vr.energy_rate_j_per_s;
    v["attempts_total"] = vr.attempts_total;
    v["eig_min_overall"] = vr.eig_min_overall;
    v["eig_max_first_window"] = vr.eig_max_first_window;
    v["eig_max_last_window"] = vr.eig_max_last_window;
    v["nonprimitive_steps"] = vr.nonprimitive_steps;
    if (vr.band.has_value()) {
      v["band"] = {{"total", vr.band->total},
                   {"inside_fraction", vr.band->inside_fraction},
                   {"positive_fraction", vr.band->positive_fraction},
                   {"observed_min", vr.band->observed_min},
                   {"observed_max", vr.band->observed_max}};
    } else {
      v["band"] = nullptr;
    }
    if (vr.margin_run0.has_value()) {
      v["margin_run0"] = margin_to_json(*vr.margin_run0);
    } else {
      v["margin_run0"] = nullptr;
    }
    variants[to_string(vr.variant)] = v;
  }
  j["variants"] = variants;
  return j;
}

inline std::string rmse_csv(const ExperimentResult& ex, bool velocity) {
  std::string s = config_comment(ex.cfg);
  s += "step";
  for (const auto& vr : ex.variants) s += "," + to_string(vr.variant);
  s += "\n";
  const int steps = ex.cfg.duration_steps;
  for (int k = 0; k < steps; ++k) {
    s += std::to_string(k + 1);
    for (const auto& vr : ex.variants) {
      const auto& series = velocity ? vr.rmse_v : vr.rmse_p;
      s += "," + fmt(series[static_cast<std::size_t>(k)]);
    }
    s += "\n";
  }
  return s;
}

/// Truth and node-averaged estimate of run 0, one row per step including
/// the initial condition.
inline std::string trajectory_csv(const ExperimentResult& ex,
                                  const VariantResult& vr) {
  std::string s = config_comment(ex.cfg);
  s += "step,truth_x_m,truth_y_m,truth_z_m,est_x_m,est_y_m,est_z_m\n";
  const RunResult& rr = vr.runs.front();
  const int n = ex.cfg.num_nodes;
  auto row = [&](int step, const Vec6& truth, double ex_, double ey, double ez) {
    s += std::to_string(step) + "," + fmt(truth(0)) + "," + fmt(truth(2)) +
         "," + fmt(truth(4)) + "," + fmt(ex_) + "," + fmt(ey) + "," +
         fmt(ez) + "\n";
  };
  row(0, rr.truth.front(), ex.cfg.estimate0(0), ex.cfg.estimate0(2),
      ex.cfg.estimate0(4));
  const int last =
      rr.failed ? static_cast<int>(rr.failure.step) - 1 : ex.cfg.duration_steps;
  for (int k = 1; k <= last; ++k) {
    double sx = 0.0, sy = 0.0, sz = 0.0;
    for (int i = 0; i < n; ++i) {
      sx += rr.estimates(k - 1, i * 6 + 0);
      sy += rr.estimates(k - 1, i * 6 + 2);
      sz += rr.estimates(k - 1, i * 6 + 4);
    }
    row(k, rr.truth[static_cast<std::size_t>(k)], sx / n, sy / n, sz / n);
  }
  return s;
}

inline std::string energy_csv(const ExperimentResult& ex,
                              const VariantResult& vr) {
  std::string s = config_comment(ex.cfg);
  s += "step,energy_j,attempts\n";
  const RunResult& rr = vr.runs.front();
  const int last =
      rr.failed ? static_cast<int>(rr.failure.step) - 1 : ex.cfg.duration_steps;
  for (int k = 1; k <= last; ++k) {
    s += std::to_string(k) + "," +
         fmt(rr.energy_j[static_cast<std::size_t>(k - 1)]) + "," +
         std::to_string(rr.attempts[static_cast<std::size_t>(k - 1)]) + "\n";
  }
  return s;
}

inline std::string telemetry_csv(const ExperimentResult& ex, int run) {
  std::string s = config_comment(ex.cfg);
  s += "variant,step,node,pos_err_sq_m2,vel_err_sq_m2_s2,eig_min,eig_max,"
       "energy_j,attempts,c_primitive\n";
  for (const auto& vr : ex.variants) {
    const RunResult& rr = vr.runs[static_cast<std::size_t>(run)];
    const int last = rr.failed ? static_cast<int>(rr.failure.step) - 1
                               : ex.cfg.duration_steps;
    for (int k = 1; k <= last; ++k) {
      const int row = k - 1;
      for (int i = 0; i < ex.cfg.num_nodes; ++i) {
        s += to_string(vr.variant) + "," + std::to_string(k) + "," +
             std::to_string(i) + "," + fmt(rr.pos_err_sq(row, i)) + "," +
             fmt(rr.vel_err_sq(row, i)) + "," + fmt(rr.eig_min(row, i)) +
             "," + fmt(rr.eig_max(row, i)) + "," +
             fmt(rr.energy_j[static_cast<std::size_t>(row)]) + "," +
             std::to_string(rr.attempts[static_cast<std::size_t>(row)]) +
             "," + std::to_string(rr.c_primitive[static_cast<std::size_t>(row)]
                                      ? 1
                                      : 0) +
             "\n";
      }
    }
  }
  return s;
}

inline void write_experiment_outputs(const ExperimentResult& ex,
                                     const std::string& command,
                                     const CommonOpts& opts) {
  const fs::path out(opts.out_dir);
  fs::create_directories(out);
  const bool want_json = opts.format == "json" || opts.format == "both";
  const bool want_csv = opts.format == "csv" || opts.format == "both";
  if (want_json) {
    write_text(out / "summary.json", summary_json(ex, command).dump(2) + "\n");
  }
  if (want_csv) {
    write_text(out / "rmse_position.csv", rmse_csv(ex, false));
    write_text(out / "rmse_velocity.csv", rmse_csv(ex, true));
    write_text(out / "trajectory.csv", trajectory_csv(ex, ex.variants.front()));
    if (ex.variants.size() > 1) {
      for (const auto& vr : ex.variants) {
        write_text(out / ("trajectory_" + to_string(vr.variant) + ".csv"),
                   trajectory_csv(ex, vr));
      }
    }
    write_text(out / "energy.csv", energy_csv(ex, ex.variants.front()));
    if (opts.telemetry) {
      for (int r = 0; r < ex.cfg.runs; ++r) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%04d.csv", r);
        write_text(out / "telemetry" / name, telemetry_csv(ex, r));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_simulate(const CommonOpts& opts, const std::string& command) {
  const ScenarioConfig cfg = load_with_overrides(opts);
  if (command == "compare" && cfg.variants.size() < 2) {
    throw ConfigError("compare requires at least 2 variants");
  }
  const ExperimentResult ex = run_monte_carlo(cfg, opts.workers);
  write_experiment_outputs(ex, command, opts);
  for (const auto& vr : ex.variants) {
    std::cout << to_string(vr.variant)
              << ": rmse_p_steady=" << fmt(vr.rmse_p_steady)
              << " rmse_v_steady=" << fmt(vr.rmse_v_steady)
              << " failed_runs=" << vr.failed_count << "/" << cfg.runs
              << "\n";
  }
  if (ex.failure_threshold_exceeded) {
    std::cerr << "experiment failed: run-failure rate exceeds "
              << fmt(cfg.failure_rate_threshold) << "\n";
    return kExitExperimentFailed;
  }
  return kExitOk;
}

inline int cmd_sweep(const CommonOpts& opts) {
  ScenarioConfig base = load_with_overrides(opts);
  if (!base.sweep.has_value() || base.sweep->levels.empty()) {
    throw ConfigError("sweep requires sweep.levels in the scenario "
                      "(or via --override / --q-levels / --u-levels-mw)");
  }
  const std::vector<SweepLevel> levels = base.sweep->levels;
  const bool u_mode = levels.front().power_mw.has_value();

  // Reference = highest level.
  std::size_t ref_idx = 0;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const double a = u_mode ? *levels[i].power_mw : *levels[i].q;
    const double b =
        u_mode ? *levels[ref_idx].power_mw : *levels[ref_idx].q;
    if (a > b) ref_idx = i;
  }

  std::vector<ExperimentResult> results;
  results.reserve(levels.size());
  for (const auto& lvl : levels) {
    ScenarioConfig cfg = base;
    cfg.sweep.reset();
    if (u_mode) {
      cfg.links.mode = LinkMode::UFixed;
      cfg.links.power_mw = *lvl.power_mw;
    } else {
      cfg.links.mode = LinkMode::QFixed;
      cfg.links.q = *lvl.q;
    }
    results.push_back(run_monte_carlo(cfg, opts.workers));
  }

  const fs::path out(opts.out_dir);
  fs::create_directories(out);

  std::string csv = config_comment(base);
  csv += "level,q,power_mw,variant,rmse_p_steady,steady_se_p,rmse_v_steady,"
         "energy_rate_j_per_s,rmse_p_change_rate,energy_change_rate\n";
  json jlevels = json::array();
  bool any_failed = false;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const ExperimentResult& ex = results[i];
    any_failed = any_failed || ex.failure_threshold_exceeded;
    const double q_eff = u_mode ? packet_success_prob(
                                      *levels[i].power_mw * 1e-3,
                                      base.channel_params())
                                : *levels[i].q;
    json jl;
    jl["q"] = q_eff;
    if (u_mode) jl["power_mw"] = *levels[i].power_mw;
    json jvars;
    for (std::size_t vi = 0; vi < ex.variants.size(); ++vi) {
      const VariantResult& vr = ex.variants[vi];
      const VariantResult& ref = results[ref_idx].variants[vi];
      const double rmse_change =
          i == ref_idx ? 0.0 : vr.rmse_p_steady / ref.rmse_p_steady - 1.0;
      double energy_change = 0.0;
      if (i != ref_idx && u_mode) {
        energy_change = compare_energy(vr, *levels[i].power_mw, ref,
                                       *levels[ref_idx].power_mw)
                            .change_rate;
      } else if (i != ref_idx) {
        energy_change =
            ref.energy_total_j_mean > 0.0
                ? vr.energy_total_j_mean / ref.energy_total_j_mean - 1.0
                : 0.0;
      }
      csv += std::to_string(i) + "," + fmt(q_eff) + "," +
             (u_mode ? fmt(*levels[i].power_mw) : std::string()) + "," +
             to_string(vr.variant) + "," + fmt(vr.rmse_p_steady) + "," +
             fmt(vr.steady_se_p) + "," + fmt(vr.rmse_v_steady) + "," +
             fmt(vr.energy_rate_j_per_s) + "," + fmt(rmse_change) + "," +
             fmt(energy_change) + "\n";
      json jv;
      jv["rmse_p_steady"] = vr.rmse_p_steady;
      jv["steady_se_p"] = vr.steady_se_p;
      jv["rmse_v_steady"] = vr.rmse_v_steady;
      jv["energy_rate_j_per_s"] = vr.energy_rate_j_per_s;
      jv["attempts_total"] = vr.attempts_total;
      jv["rmse_p_change_rate"] = rmse_change;
      jv["energy_change_rate"] = energy_change;
      jv["failed_runs"] = vr.failed_count;
      jvars[to_string(vr.variant)] = jv;
    }
    jl["variants"] = jvars;
    jlevels.push_back(jl);
  }
  const bool want_json = opts.format == "json" || opts.format == "both";
  const bool want_csv = opts.format == "csv" || opts.format == "both";
  if (want_csv) write_text(out / "sweep.csv", csv);
  if (want_json) {
    json j;
    j["schema"] = 1;
    j["command"] = "sweep";
    j["scenario"] = to_json(base);
    j["reference_level"] = ref_idx;
    j["levels"] = jlevels;
    write_text(out / "sweep_summary.json", j.dump(2) + "\n");
  }
  std::cout << "sweep: " << levels.size() << " levels, reference level "
            << ref_idx << "\n";
  return any_failed ? kExitExperimentFailed : kExitOk;
}

inline int cmd_power_map(const CommonOpts& opts, double min_mw, double max_mw,
                         int points) {
  if (points < 2 || !(max_mw > min_mw) || min_mw < 0.0) {
    throw ConfigError("power-map needs min_mw >= 0, max_mw > min_mw, "
                      "points >= 2");
  }
  const ScenarioConfig cfg = load_with_overrides(opts);
  const ChannelParams cp = cfg.channel_params();
  std::string csv = config_comment(cfg);
  csv += "power_mw,ber,packet_success_prob\n";
  for (int i = 0; i < points; ++i) {
    const double u_mw =
        min_mw + (max_mw - min_mw) * static_cast<double>(i) /
                     static_cast<double>(points - 1);
    const double ber = ber_bfsk(u_mw * 1e-3, cp);
    const double q = packet_success_prob(ber, cp.packet_bits);
    csv += fmt(u_mw) + "," + fmt(ber) + "," + fmt(q) + "\n";
  }
  const fs::path out(opts.out_dir);
  fs::create_directories(out);
  write_text(out / "power_map.csv", csv);
  std::cout << "power-map: " << points << " rows\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify: oracle/property suite
// ---------------------------------------------------------------------------

namespace detail {

/// Adaptive Simpson quadrature (used as an independent oracle for the
/// truncated-normal moment).
template <typename F>
inline double simpson(F&& f, double a, double b, double fa, double fm,
                      double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <typename F>
inline double integrate(F&& f, double a, double b, double tol) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

/// Quadrature oracle for E[eps^2] of the truncated normal.  Integrates in
/// the standardized variable so the integrand always has unit scale (in the
/// raw variable a large delta/sigma turns it into a spike the adaptive rule
/// can step over), caps the range at 12 sigma (the omitted mass is ~1e-32
/// of the total), and sizes the absolute tolerances to the leading-order
/// magnitude of each integral so the relative error stays ~1e-13 for any
/// ratio.
inline double truncated_moment_quadrature(double sigma, double delta) {
  const double a = std::min(delta / sigma, 12.0);
  const double s = std::min(a, 1.0);
  auto weighted = [](double t) { return t * t * std_normal_pdf(t); };
  const double mass = 2.0 * integrate(std_normal_pdf, 0.0, a, 1e-14 * s);
  const double second = 2.0 * integrate(weighted, 0.0, a, 3e-15 * s * s * s);
  return sigma * sigma * second / mass;
}

struct PropertyResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;   ///< worst observed deviation / statistic
  double tolerance = 0.0;
  std::string note;
};

/// Random SPD matrix with condition number bounded by construction.
inline Eigen::MatrixXd random_spd(int n, RngStream& rng, double eig_lo,
                                  double eig_hi) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = sample_std_normal(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) eigs(i) = rng.uniform(eig_lo, eig_hi);
  return symmetrized(q * eigs.asDiagonal() * q.transpose());
}

/// Shared harness for the IF-vs-gain and symmetry properties: builds a
/// random single-node measurement-update instance and runs both forms.
struct UpdateInstance {
  Eigen::VectorXd x_pred;
  Eigen::MatrixXd p_pred;
  SigmaPointSet pts;
  Eigen::VectorXd z, z_hat;
  InnovationCov cov;
};

inline UpdateInstance random_update_instance(RngStream& rng) {
  const int n = 6;
  UpdateInstance inst;
  inst.x_pred = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) inst.x_pred(i) = 100.0 * sample_std_normal(rng);
  inst.p_pred = random_spd(n, rng, 0.5, 50.0);
  inst.pts = sample_sigma_points(NodeEstimate{inst.x_pred, inst.p_pred}, 0.0);
  SensorNode node;
  node.position_m =
      Eigen::Vector3d(rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0),
                      rng.uniform(-200.0, 200.0));
  const double theta_hat = rng.uniform(0.2, 2.0);
  auto h_fn = [&node](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, range_measurement(Vec6(x), node));
  };
  auto [z_hat, xi] = predict_measurement(inst.pts, h_fn, theta_hat);
  inst.z_hat = z_hat;
  const double r = rng.uniform(0.5, 20.0);
  inst.cov = innovation_covariances(inst.pts, xi, inst.x_pred, z_hat,
                                    Eigen::MatrixXd::Constant(1, 1, r));
  inst.z = z_hat + Eigen::VectorXd::Constant(1, sample_std_normal(rng) *
                                                    std::sqrt(r));
  return inst;
}

}  // namespace detail

inline int cmd_verify(const CommonOpts& opts, const std::string& inject) {
  using detail::PropertyResult;
  std::vector<PropertyResult> props;
  const bool inject_skip_resym = inject == "skip-resymmetrization";
  if (!inject.empty() && !inject_skip_resym) {
    throw ConfigError("unknown fault '" + inject +
                      "' (supported: skip-resymmetrization)");
  }

  // 1. Information-form fusion agrees with the gain-form update.
  {
    PropertyResult p{"if_gain_equivalence", false, 0.0, 1e-10, ""};
    RngStream rng(2024, StreamId{0, 0, 0, 0, Purpose::Placement});
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
      auto inst = detail::random_update_instance(rng);
      const NodeEstimate gain = gain_form_update(inst.x_pred, inst.p_pred,
                                                 inst.cov, inst.z, inst.z_hat);
      const InformationPair pair =
          information_pair(inst.p_pred, inst.cov, inst.z, inst.z_hat);
      const NodeEstimate fused =
          local_fuse(inst.x_pred, inst.p_pred, {pair}, {1.0});
      const double dx = (gain.x - fused.x).norm() /
                        std::max(1.0, gain.x.norm());
      const double dp = (gain.p - fused.p).norm() /
                        std::max(1.0, gain.p.norm());
      worst = std::max({worst, dx, dp});
    }
    p.measured = worst;
    p.pass = worst <= p.tolerance;
    props.push_back(p);
  }

  // 2. Prediction through linear dynamics is exact: P -> F P F^T + Q.
  {
    PropertyResult p{"sigma_linear_exactness", false, 0.0, 1e-9, ""};
    RngStream rng(2025, StreamId{0, 0, 0, 0, Purpose::Placement});
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
      const Eigen::MatrixXd p0 = detail::random_spd(6, rng, 0.1, 30.0);
      Eigen::VectorXd x0(6);
      for (int i = 0; i < 6; ++i) x0(i) = 10.0 * sample_std_normal(rng);
      MotionParams mp{rng.uniform(-1.0, 1.0), rng.uniform(0.2, 2.0),
                      rng.uniform(0.0, 5.0)};
      const Mat6 f = transition_matrix(mp);
      const Mat6 q = process_noise_cov(mp);
      const Prediction pred =
          predict(NodeEstimate{x0, p0}, f, q, rng.uniform(0.0, 3.0));
      const Eigen::MatrixXd expect_p = f * p0 * f.transpose() + q;
      const Eigen::VectorXd expect_x = f * x0;
      worst = std::max(worst, (pred.p - expect_p).cwiseAbs().maxCoeff() /
                                  std::max(1.0, expect_p.norm()));
      worst = std::max(worst, (pred.x - expect_x).cwiseAbs().maxCoeff() /
                                  std::max(1.0, expect_x.norm()));
    }
    p.measured = worst;
    p.pass = worst <= p.tolerance;
    props.push_back(p);
  }

  // 3. Closed-form truncated moment vs adaptive quadrature.
  {
    PropertyResult p{"moment_quadrature", false, 0.0, 1e-8, ""};
    double worst = 0.0;
    const double deltas[] = {0.1, 0.5, 1.0};
    const double sigmas[] = {0.01, 0.1, 1.0, std::sqrt(10.0),
                             std::sqrt(20.0), 100.0};
    for (double d : deltas) {
      for (double s : sigmas) {
        const double closed = truncated_normal_second_moment(s, d);
        const double quad = detail::truncated_moment_quadrature(s, d);
        worst = std::max(worst, std::abs(closed - quad) / quad);
      }
    }
    p.measured = worst;
    p.pass = worst <= p.tolerance;
    props.push_back(p);
  }

  // 4. Covariances stay symmetric through the whole update pipeline.  The
  //    injected fault adds the kind of asymmetric residue that skipping
  //    re-symmetrization would leave behind, to prove the check can fail.
  {
    PropertyResult p{"symmetry_audit", false, 0.0, 1e-10, ""};
    if (inject_skip_resym) p.note = "fault injected: skip-resymmetrization";
    RngStream rng(2026, StreamId{0, 0, 0, 0, Purpose::Placement});
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      auto inst = detail::random_update_instance(rng);
      const InformationPair pair =
          information_pair(inst.p_pred, inst.cov, inst.z, inst.z_hat);
      NodeEstimate fused =
          local_fuse(inst.x_pred, inst.p_pred, {pair}, {1.0});
      NodeEstimate gain = gain_form_update(inst.x_pred, inst.p_pred, inst.cov,
                                           inst.z, inst.z_hat);
      NodeEstimate mixed = diffuse({fused, gain},
                                   (Eigen::VectorXd(2) << 0.5, 0.5).finished());
      if (inject_skip_resym) {
        // Perturb with an antisymmetric residue of the size a skipped
        // (P + P^T)/2 pass would leave behind.
        const Eigen::MatrixXd a = (inst.cov.p_xz / inst.cov.p_zz(0, 0)) *
                                  inst.x_pred.transpose();
        mixed.p += 1e-6 * (a - a.transpose());
      }
      worst = std::max({worst, max_abs_asymmetry(fused.p),
                        max_abs_asymmetry(gain.p),
                        max_abs_asymmetry(mixed.p)});
    }
    p.measured = worst;
    p.pass = worst <= p.tolerance;
    props.push_back(p);
  }

  // 5. Stationary-weight fixed point on random consensus matrices.
  {
    PropertyResult p{"pf_fixed_point", false, 0.0, 1e-10, ""};
    RngStream rng(2027, StreamId{0, 0, 0, 0, Purpose::Placement});
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const int n = 2 + static_cast<int>(rng.next_u64() % 8);
      Eigen::MatrixXd c(n, n);
      for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          c(i, j) = (i == j || rng.bernoulli(0.6)) ? rng.uniform(0.05, 1.0)
                                                   : 0.0;
          sum += c(i, j);
        }
        c.row(i) /= sum;
      }
      const PfVector pf = pf_left_eigenvector(c);
      worst = std::max(worst,
                       (c.transpose() * pf.v - pf.v).cwiseAbs().maxCoeff());
    }
    p.measured = worst;
    p.pass = worst <= p.tolerance;
    props.push_back(p);
  }

  // 6. Metropolis weights are row-stochastic with positive diagonal under
  //    arbitrary delivery patterns.
  {
    PropertyResult p{"metropolis_rows", false, 0.0, 1e-12, ""};
    RngStream rng(2028, StreamId{0, 0, 0, 0, Purpose::Placement});
    double worst = 0.0;
    bool diag_ok = true;
    for (int t = 0; t < 100; ++t) {
      const int n = 3 + static_cast<int>(rng.next_u64() % 10);
      std::vector<Eigen::Vector3d> pos(static_cast<std::size_t>(n));
      for (auto& v : pos) {
        v = Eigen::Vector3d(rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0),
                            rng.uniform(0.0, 100.0));
      }
      const Graph g = Graph::from_positions(pos, 60.0);
      Eigen::MatrixXd mask(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) mask(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
      const Eigen::MatrixXd c = metropolis_weights(g, mask);
      for (int i = 0; i < n; ++i) {
        worst = std::max(worst, std::abs(c.row(i).sum() - 1.0));
        diag_ok = diag_ok && c(i, i) > 0.0 && c.row(i).minCoeff() >= 0.0;
      }
    }
    p.measured = worst;
    p.pass = diag_ok && worst <= p.tolerance;
    if (!diag_ok) p.note = "diagonal or nonnegativity violated";
    props.push_back(p);
  }

  // 7. Boundedness/stability diagnostics on a short default-scenario run.
  json margin_series = nullptr;
  {
    PropertyResult p{"boundedness_diagnostics", false, 0.0, 1.0, ""};
    ScenarioConfig cfg = reference_scenario();
    cfg.runs = 1;
    cfg.duration_steps = 50;
    cfg.variants = {FilterVariant::Fc};
    const ExperimentResult ex = run_monte_carlo(cfg, 1);
    const VariantResult& vr = ex.variants.front();
    const bool band_ok = vr.band.has_value() &&
                         vr.band->positive_fraction == 1.0;
    const bool margin_ok = vr.margin_run0.has_value();
    if (margin_ok) margin_series = margin_to_json(*vr.margin_run0);
    p.measured = vr.band.has_value() ? vr.band->positive_fraction : 0.0;
    p.pass = band_ok && margin_ok && vr.failed_count == 0;
    if (!p.pass) p.note = "diagnostics unavailable or positivity violated";
    props.push_back(p);
  }

  bool all_pass = true;
  json report;
  report["schema"] = 1;
  report["command"] = "verify";
  report["injected_fault"] = inject.empty() ? json() : json(inject);
  json jprops = json::array();
  for (const auto& p : props) {
    all_pass = all_pass && p.pass;
    json jp;
    jp["name"] = p.name;
    jp["pass"] = p.pass;
    jp["measured"] = p.measured;
    jp["tolerance"] = p.tolerance;
    if (!p.note.empty()) jp["note"] = p.note;
    jprops.push_back(jp);
    std::cout << (p.pass ? "[PASS] " : "[FAIL] ") << p.name
              << " (measured " << fmt(p.measured) << ", tolerance "
              << fmt(p.tolerance) << ")\n";
  }
  report["properties"] = jprops;
  report["margin_series_default_scenario"] = margin_series;
  report["all_pass"] = all_pass;
  const fs::path out(opts.out_dir);
  fs::create_directories(out);
  write_text(out / "verify_report.json", report.dump(2) + "\n");
  return all_pass ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(int argc, char** argv) {
  CLI::App app{
      "Distributed unscented Kalman filtering over fading channels: "
      "deterministic tracking simulator"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string inject;
  double pm_min = 0.0;
  double pm_max = 400.0;
  int pm_points = 81;
  std::vector<double> q_levels;
  std::vector<double> u_levels;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", opts.scenario_path,
                    "Scenario JSON file (default: built-in reference scenario)");
    sub->add_option("--override", opts.overrides,
                    "Scenario override KEY=VALUE (dotted keys, repeatable)");
    sub->add_option("--out", opts.out_dir, "Output directory");
    sub->add_option("--workers", opts.workers,
                    "Worker threads (never affects results)");
    sub->add_option("--format", opts.format, "Output selection")
        ->check(CLI::IsMember({"csv", "json", "both"}));
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Run one experiment");
  add_common(simulate);
  simulate->add_flag("--telemetry", opts.telemetry,
                     "Write per-run telemetry CSV bundle");
  CLI::App* compare = app.add_subcommand(
      "compare", "Run >= 2 variants under shared noise realizations");
  add_common(compare);
  compare->add_flag("--telemetry", opts.telemetry,
                    "Write per-run telemetry CSV bundle");
  CLI::App* sweep =
      app.add_subcommand("sweep", "Run the scenario across q or power levels");
  add_common(sweep);
  sweep->add_option("--q-levels", q_levels,
                    "Sweep over these q values (overrides scenario sweep)");
  sweep->add_option("--u-levels-mw", u_levels,
                    "Sweep over these power levels in mW");
  CLI::App* verify =
      app.add_subcommand("verify", "Run the oracle/property suite");
  add_common(verify);
  verify->add_option("--inject", inject,
                     "Inject a fault (skip-resymmetrization) to prove the "
                     "suite can fail");
  CLI::App* power_map = app.add_subcommand(
      "power-map", "Tabulate BER and packet success vs transmit power");
  add_common(power_map);
  power_map->add_option("--min-mw", pm_min, "Lowest power level (mW)");
  power_map->add_option("--max-mw", pm_max, "Highest power level (mW)");
  power_map->add_option("--points", pm_points, "Number of grid points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opts, "simulate");
    if (compare->parsed()) return cmd_simulate(opts, "compare");
    if (sweep->parsed()) {
      if (!q_levels.empty() && !u_levels.empty()) {
        throw ConfigError("--q-levels and --u-levels-mw are exclusive");
      }
      if (!q_levels.empty() || !u_levels.empty()) {
        json levels = json::array();
        for (double q : q_levels) levels.push_back({{"q", q}});
        for (double u : u_levels) levels.push_back({{"power_mw", u}});
        opts.overrides.push_back("sweep=" +
                                 json{{"levels", levels}}.dump());
      }
      return cmd_sweep(opts);
    }
    if (verify->parsed()) return cmd_verify(opts, inject);
    if (power_map->parsed()) {
      return cmd_power_map(opts, pm_min, pm_max, pm_points);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitExperimentFailed;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace dukf::cli
