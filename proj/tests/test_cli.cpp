#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string bin_path() {
  const char* b = std::getenv("DUKF_BIN");
  REQUIRE(b != nullptr);  // set by the test harness
  return b;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

/// Run the tool with `args`, capture combined stdout/stderr, return the exit
/// code.
int run_tool(const std::string& args, std::string* captured = nullptr) {
  static int counter = 0;
  const fs::path log =
      fs::temp_directory_path() /
      ("dukf_cli_log_" + std::to_string(::getpid()) + "_" +
       std::to_string(counter++) + ".txt");
  const std::string cmd =
      bin_path() + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  if (captured != nullptr) *captured = read_file(log);
  fs::remove(log);
  return WEXITSTATUS(rc);
}

/// Fresh output directory under the system temp root.
fs::path out_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() /
                     ("dukf_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// Shrunk variant of the built-in scenario: 1 run, 5 steps.
const std::string kFast =
    " --override runs=1 --override duration_steps=5"
    " --override metrics.steady_state_window=5";

}  // namespace

TEST_CASE("simulate writes the full artifact set", "[cli]") {
  const fs::path out = out_dir("artifacts");
  const int rc = run_tool("simulate" + kFast +
                          " --override 'filter.variants=[\"Fc\",\"eFc\"]'"
                          " --out " + out.string());
  CHECK(rc == 0);
  for (const char* name :
       {"summary.json", "rmse_position.csv", "rmse_velocity.csv",
        "trajectory.csv", "trajectory_Fc.csv", "trajectory_eFc.csv",
        "energy.csv"}) {
    INFO(name);
    CHECK(fs::exists(out / name));
  }

  const json j = json::parse(read_file(out / "summary.json"));
  CHECK(j.at("schema").get<int>() == 1);
  CHECK(j.at("command").get<std::string>() == "simulate");
  CHECK(j.at("scenario").at("master_seed").get<int>() == 150);
  CHECK(j.at("graph").at("connected").get<bool>());
  CHECK(j.at("graph").at("directed_edges").get<int>() > 0);
  CHECK(j.at("diagnostics").at("p_lo").get<double>() > 0.0);
  CHECK_FALSE(j.at("failure_threshold_exceeded").get<bool>());
  const json& fc = j.at("variants").at("Fc");
  CHECK(fc.at("runs").get<int>() == 1);
  CHECK(fc.at("failed_runs").get<int>() == 0);
  CHECK(fc.at("rmse_p_steady").get<double>() > 0.0);
  CHECK(fc.at("eig_min_overall").get<double>() > 0.0);

  // Trajectory: config comment + header + rows 0..5.
  const auto traj = lines_of(read_file(out / "trajectory.csv"));
  REQUIRE(traj.size() == 8);
  CHECK(traj[0].rfind("# config:", 0) == 0);
  CHECK(traj[1] ==
        "step,truth_x_m,truth_y_m,truth_z_m,est_x_m,est_y_m,est_z_m");
  CHECK(traj[2] == "0,0,0,-1500,20,80,-1450");

  // RMSE table: one column per variant, rows 1..5.
  const auto rmse = lines_of(read_file(out / "rmse_position.csv"));
  REQUIRE(rmse.size() == 7);
  CHECK(rmse[1] == "step,Fc,eFc");
  CHECK(split_csv(rmse[2])[0] == "1");
  CHECK(split_csv(rmse[6])[0] == "5");

  // Energy: attempts per step = 2 * directed edges.
  const auto energy = lines_of(read_file(out / "energy.csv"));
  REQUIRE(energy.size() == 7);
  const int edges = j.at("graph").at("directed_edges").get<int>();
  CHECK(split_csv(energy[2])[2] == std::to_string(2 * edges));

  fs::remove_all(out);
}

TEST_CASE("repeated runs are byte-identical", "[cli]") {
  const fs::path a = out_dir("repeat_a");
  const fs::path b = out_dir("repeat_b");
  const std::string args = "simulate" + kFast +
                           " --override master_seed=7"
                           " --override 'filter.variants=[\"Fc\"]' --out ";
  CHECK(run_tool(args + a.string()) == 0);
  CHECK(run_tool(args + b.string()) == 0);
  for (const char* name : {"summary.json", "rmse_position.csv",
                           "trajectory.csv", "energy.csv"}) {
    INFO(name);
    CHECK(read_file(a / name) == read_file(b / name));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("worker count never changes the bytes", "[cli]") {
  const fs::path a = out_dir("workers_1");
  const fs::path b = out_dir("workers_8");
  const std::string args =
      "simulate" + kFast +
      " --override runs=2"
      " --override 'filter.variants=[\"Fc\",\"eFc\"]'";
  CHECK(run_tool(args + " --workers 1 --out " + a.string()) == 0);
  CHECK(run_tool(args + " --workers 8 --out " + b.string()) == 0);
  CHECK(read_file(a / "summary.json") == read_file(b / "summary.json"));
  CHECK(read_file(a / "rmse_position.csv") ==
        read_file(b / "rmse_position.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("bad configuration exits 2 and writes nothing", "[cli]") {
  const fs::path out = out_dir("bad_config");
  std::string log;
  const int rc = run_tool("simulate --override comm_range_m=-5 --out " +
                              out.string(), &log);
  CHECK(rc == 2);
  CHECK(log.find("config error") != std::string::npos);
  CHECK(log.find("comm_range_m") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "summary.json"));

  CHECK(run_tool("simulate --override not-a-pair") == 2);
  CHECK(run_tool("frobnicate") == 2);
  CHECK(run_tool("") == 2);  // a subcommand is required
  CHECK(run_tool("simulate --help") == 0);
  fs::remove_all(out);
}

TEST_CASE("variants collapse when the fading estimate is exact", "[cli]") {
  const fs::path out = out_dir("collapse");
  const int rc = run_tool(
      "compare --override runs=2 --override duration_steps=10"
      " --override metrics.steady_state_window=10"
      " --override fading.sigma_eps=1e-12 --override fading.delta_eps=1e-12"
      " --override 'filter.variants=[\"Fc\",\"eFc\"]' --out " + out.string());
  CHECK(rc == 0);
  const json j = json::parse(read_file(out / "summary.json"));
  CHECK(j.at("command").get<std::string>() == "compare");

  const auto rmse = lines_of(read_file(out / "rmse_position.csv"));
  REQUIRE(rmse.size() == 12);
  REQUIRE(rmse[1] == "step,Fc,eFc");
  double worst = 0.0;
  for (std::size_t i = 2; i < rmse.size(); ++i) {
    const auto cells = split_csv(rmse[i]);
    REQUIRE(cells.size() == 3);
    worst = std::max(worst,
                     std::abs(std::stod(cells[1]) - std::stod(cells[2])));
  }
  CHECK(worst <= 1e-6);
  fs::remove_all(out);

  // compare insists on at least two variants.
  CHECK(run_tool("compare --override 'filter.variants=[\"Fc\"]'" + kFast) ==
        2);
}

TEST_CASE("single-level sweeps report zero change", "[cli]") {
  const fs::path out = out_dir("sweep_one");
  const int rc = run_tool("sweep --q-levels 0.5" + kFast +
                          " --override 'filter.variants=[\"Fc\"]' --out " +
                          out.string());
  CHECK(rc == 0);
  const auto rows = lines_of(read_file(out / "sweep.csv"));
  REQUIRE(rows.size() == 3);  // comment, header, one level x one variant
  const auto cells = split_csv(rows[2]);
  REQUIRE(cells.size() == 10);
  CHECK(cells[1] == "0.5");        // q
  CHECK(cells[2].empty());         // power column unused in q mode
  CHECK(cells[3] == "Fc");
  CHECK(cells[8] == "0");          // rmse change vs itself
  CHECK(cells[9] == "0");          // energy change vs itself
  const json j = json::parse(read_file(out / "sweep_summary.json"));
  CHECK(j.at("reference_level").get<int>() == 0);
  CHECK(j.at("levels").size() == 1);
  fs::remove_all(out);

  CHECK(run_tool("sweep --q-levels 0.5 --u-levels-mw 100" + kFast) == 2);
  CHECK(run_tool("sweep" + kFast) == 2);  // no levels anywhere
}

TEST_CASE("power sweeps report the exact linear energy savings", "[cli]") {
  const fs::path out = out_dir("sweep_power");
  const int rc = run_tool(
      "sweep --u-levels-mw 93 118 140 168 400" + kFast +
      " --override 'filter.variants=[\"Fc\"]' --out " + out.string());
  CHECK(rc == 0);
  const json j = json::parse(read_file(out / "sweep_summary.json"));
  CHECK(j.at("reference_level").get<int>() == 4);
  const json& levels = j.at("levels");
  REQUIRE(levels.size() == 5);
  const double powers[] = {93.0, 118.0, 140.0, 168.0, 400.0};
  for (std::size_t i = 0; i < 5; ++i) {
    const json& fc = levels[i].at("variants").at("Fc");
    const double want = i == 4 ? 0.0 : powers[i] / 400.0 - 1.0;
    CHECK(fc.at("energy_change_rate").get<double>() == want);
    CHECK(levels[i].at("power_mw").get<double>() == powers[i]);
    CHECK(levels[i].at("q").get<double>() > 0.0);
  }
  // Higher power -> better link -> usually lower steady error; at least the
  // derived q must be strictly increasing.
  for (std::size_t i = 1; i < 5; ++i) {
    CHECK(levels[i].at("q").get<double>() >
          levels[i - 1].at("q").get<double>());
  }
  fs::remove_all(out);
}

TEST_CASE("power map tabulates the link model", "[cli]") {
  const fs::path out = out_dir("power_map");
  const int rc = run_tool(
      "power-map --min-mw 0 --max-mw 400 --points 5 --out " + out.string());
  CHECK(rc == 0);
  const auto rows = lines_of(read_file(out / "power_map.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[1] == "power_mw,ber,packet_success_prob");
  double prev_q = -1.0;
  for (int i = 0; i < 5; ++i) {
    const auto cells = split_csv(rows[static_cast<std::size_t>(i) + 2]);
    REQUIRE(cells.size() == 3);
    CHECK(std::stod(cells[0]) == 100.0 * i);
    const double q = std::stod(cells[2]);
    CHECK(q >= prev_q);
    prev_q = q;
  }
  // Zero power: coin-flip bits, so q = 2^-1000 -- positive but denormal-tiny.
  const double q0 = std::stod(split_csv(rows[2])[2]);
  CHECK(q0 > 0.0);
  CHECK(q0 < 1e-300);
  CHECK(std::stod(split_csv(rows[6])[2]) > 0.999);
  fs::remove_all(out);

  CHECK(run_tool("power-map --points 1") == 2);
  CHECK(run_tool("power-map --min-mw 5 --max-mw 5") == 2);
}

TEST_CASE("failed experiments exit 3 but still write the summary", "[cli]") {
  const fs::path out = out_dir("exit3");
  std::string log;
  const int rc = run_tool(
      "simulate --override init.p0_scale=0 --override motion.eta_sq=0"
      " --override runs=2 --override duration_steps=3"
      " --override metrics.steady_state_window=3"
      " --override 'filter.variants=[\"Fc\"]' --out " + out.string(), &log);
  CHECK(rc == 3);
  CHECK(log.find("experiment failed") != std::string::npos);
  REQUIRE(fs::exists(out / "summary.json"));
  const json j = json::parse(read_file(out / "summary.json"));
  CHECK(j.at("failure_threshold_exceeded").get<bool>());
  const json& fc = j.at("variants").at("Fc");
  CHECK(fc.at("failed_runs").get<int>() == 2);
  REQUIRE(fc.at("failures").size() == 2);
  CHECK(fc.at("failures")[0].at("step").get<int>() == 1);
  fs::remove_all(out);
}

TEST_CASE("verify passes clean and fails with an injected fault", "[cli]") {
  const fs::path out = out_dir("verify");
  std::string log;
  const int rc = run_tool("verify --out " + out.string(), &log);
  CHECK(rc == 0);
  CHECK(log.find("[PASS] if_gain_equivalence") != std::string::npos);
  CHECK(log.find("[FAIL]") == std::string::npos);
  const json j = json::parse(read_file(out / "verify_report.json"));
  CHECK(j.at("all_pass").get<bool>());
  CHECK(j.at("injected_fault").is_null());
  REQUIRE(j.at("properties").size() == 7);
  CHECK_FALSE(j.at("margin_series_default_scenario").is_null());

  const int rc_bad = run_tool(
      "verify --inject skip-resymmetrization --out " + out.string(), &log);
  CHECK(rc_bad == 4);
  CHECK(log.find("[FAIL] symmetry_audit") != std::string::npos);
  const json jb = json::parse(read_file(out / "verify_report.json"));
  CHECK_FALSE(jb.at("all_pass").get<bool>());
  for (const auto& prop : jb.at("properties")) {
    if (prop.at("name") == "symmetry_audit") {
      CHECK_FALSE(prop.at("pass").get<bool>());
      CHECK(prop.at("note").get<std::string>().find("fault injected") !=
            std::string::npos);
    } else {
      CHECK(prop.at("pass").get<bool>());
    }
  }
  fs::remove_all(out);

  CHECK(run_tool("verify --inject no-such-fault") == 2);
}

TEST_CASE("format flag selects the artifact families", "[cli]") {
  const fs::path out = out_dir("format");
  const std::string base = "simulate" + kFast +
                           " --override 'filter.variants=[\"Fc\"]'";
  CHECK(run_tool(base + " --format json --out " + out.string()) == 0);
  CHECK(fs::exists(out / "summary.json"));
  CHECK_FALSE(fs::exists(out / "rmse_position.csv"));
  fs::remove_all(out);

  CHECK(run_tool(base + " --format csv --out " + out.string()) == 0);
  CHECK_FALSE(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "rmse_position.csv"));
  fs::remove_all(out);

  CHECK(run_tool(base + " --format xml --out " + out.string()) == 2);

  CHECK(run_tool(base + " --telemetry --out " + out.string()) == 0);
  const fs::path tele = out / "telemetry" / "run_0000.csv";
  REQUIRE(fs::exists(tele));
  const auto rows = lines_of(read_file(tele));
  CHECK(rows[1].rfind("variant,step,node", 0) == 0);
  // 5 steps x 20 nodes of data after the two header lines.
  CHECK(rows.size() == 2 + 5 * 20);
  fs::remove_all(out);
}
