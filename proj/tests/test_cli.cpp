#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tarc/config.hpp"
#include "tarc/report.hpp"

namespace fs = std::filesystem;
using namespace tarc;

namespace {

const std::string kExe = TARC_LAB_EXE;
const std::string kConfigs = TARC_CONFIG_DIR;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::size_t fields(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("tarc_cli_" + std::string(info->name()) + "_" +
                                        std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome lab(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "\"" + kExe + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

  /// Writes `text` as a config file and returns its path.
  std::string write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }

  /// The benchmark with a short horizon, as a file.
  std::string short_benchmark(double duration, int record_every) {
    nlohmann::json j = nlohmann::json::parse(slurp(kConfigs + "/benchmark.json"));
    j["sim"]["duration"] = duration;
    j["sim"]["record_every"] = record_every;
    return write("short.json", j.dump(2));
  }

  fs::path dir_;
};

std::string config(const std::string& name) { return kConfigs + "/" + name; }

}  // namespace

TEST_F(Cli, CheckGainsFeasible) {
  const Outcome o = lab("check-gains --config " + config("gains_feasible.json"));
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("feasible true"), std::string::npos);
  const auto pos = o.out.find("lambda_min_psi ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_GT(std::stod(o.out.substr(pos + 15)), 0.0);
  EXPECT_NE(o.out.find("P_eigenvalues"), std::string::npos);
}

TEST_F(Cli, CheckGainsLongDelayInfeasible) {
  const Outcome o = lab("check-gains --config " + config("gains_long_delay.json"));
  EXPECT_EQ(o.code, 2) << o.err;
  EXPECT_NE(o.out.find("feasible false"), std::string::npos);
}

TEST_F(Cli, CheckGainsReportRecord) {
  const Outcome o = lab("check-gains --config " + config("gains_feasible.json") + " --out " +
                        (dir_ / "rep").string());
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = lines(slurp(dir_ / "rep" / "report.csv"));
  ASSERT_GE(rows.size(), 2u);
  const std::string hash = config_hash(load_config(config("gains_feasible.json")));
  EXPECT_NE(rows[1].find(hash), std::string::npos);
  EXPECT_NE(o.out.find("config_hash " + hash), std::string::npos);
}

TEST_F(Cli, UnknownKeyIsNamed) {
  const std::string path = write("bad.json", R"({
  "controller": {"strategy": "TDC", "K1": 4, "K2": 4, "K3": 1},
  "sim": {"dt": 0.001, "duration": 1.0}
})");
  const Outcome o = lab("check-gains --config " + path);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("controller.K3"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("line 2"), std::string::npos) << o.err;
}

TEST_F(Cli, ConstraintViolationNamesKeyAndRule) {
  const std::string path = write("bad.json", R"({
  "controller": {"strategy": "TARC", "K1": 4, "K2": 4,
                 "alpha": 0.5},
  "sim": {"dt": 0.001, "duration": 1.0}
})");
  const Outcome o = lab("check-gains --config " + path);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("controller.alpha"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("must be > 1"), std::string::npos) << o.err;
}

TEST_F(Cli, MissingGainsRejected) {
  const std::string path = write("bad.json", R"({"controller": {"strategy": "TDC", "K2": 4}})");
  const Outcome o = lab("check-gains --config " + path);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("controller.K1"), std::string::npos) << o.err;
}

TEST_F(Cli, SyntaxErrorReportsLine) {
  const std::string path = write("bad.json", "{\n  \"controller\": {\n    \"K1\": 4,,\n  }\n}\n");
  const Outcome o = lab("check-gains --config " + path);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("line 3"), std::string::npos) << o.err;
}

TEST_F(Cli, NonIntegerDelayRejected) {
  const std::string path = write("bad.json", R"({
  "controller": {"strategy": "TDC", "K1": 4, "K2": 4, "h": 0.0015},
  "sim": {"dt": 0.001, "duration": 1.0}
})");
  const Outcome o = lab("check-gains --config " + path);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("controller.h"), std::string::npos) << o.err;
}

TEST_F(Cli, MaxDelayMatchesGridScan) {
  const Outcome o = lab("max-delay --config " + config("gains_feasible.json"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto pos = o.out.find("h_star ");
  ASSERT_NE(pos, std::string::npos);
  const double h_star = std::stod(o.out.substr(pos + 7));
  EXPECT_NE(o.out.find("feasible_below true"), std::string::npos);
  EXPECT_NE(o.out.find("feasible_above false"), std::string::npos);

  const ExperimentConfig cfg = load_config(config("gains_feasible.json"));
  const GainSet g = make_gains(cfg);
  StabilityParams p = make_stability_params(cfg);
  double last_feasible = 0.0;
  for (double h = 1e-4; h < 1.0; h += 1e-4) {
    p.h = h;
    if (assemble_psi(g, p).feasible) last_feasible = h;
  }
  EXPECT_LE(std::abs(h_star - last_feasible), 1e-4);
}

TEST_F(Cli, MaxDelayWithoutFeasiblePoint) {
  nlohmann::json j = nlohmann::json::parse(slurp(config("gains_feasible.json")));
  j["stability"]["beta"] = 1.0;
  const Outcome o = lab("max-delay --config " + write("b1.json", j.dump()));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("NoFeasiblePoint"), std::string::npos) << o.err;
}

TEST_F(Cli, SimulateSchemaAndRowCount) {
  const std::string path = short_benchmark(0.5, 10);
  const Outcome o = lab("simulate --config " + path + " --out " + (dir_ / "a").string());
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = lines(slurp(dir_ / "a" / "trace.csv"));
  const int n = 2;
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(fields(rows[0]), static_cast<std::size_t>(1 + 5 * n + 2));
  EXPECT_EQ(rows[0], "t,q_1,q_2,qd_1,qd_2,qdot_1,qdot_2,e1_1,e1_2,tau_1,tau_2,c_hat,s_norm");
  EXPECT_EQ(rows.size() - 1, static_cast<std::size_t>(std::floor(0.5 / 0.001 / 10)) + 1);
  for (const auto& r : rows) EXPECT_EQ(fields(r), static_cast<std::size_t>(1 + 5 * n + 2));
}

TEST_F(Cli, SimulateIsByteIdenticalOnRerun) {
  const std::string path = short_benchmark(1.0, 1);
  ASSERT_EQ(lab("simulate --config " + path + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(lab("simulate --config " + path + " --out " + (dir_ / "b").string()).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "b" / "trace.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
  ASSERT_EQ(lab("simulate --config " + path + " --seed 9 --out " + (dir_ / "c").string()).code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "c" / "trace.csv"));
}

TEST_F(Cli, TraceReadBackReproducesMetrics) {
  const std::string path = short_benchmark(1.0, 1);
  ASSERT_EQ(lab("simulate --config " + path + " --out " + (dir_ / "a").string()).code, 0);
  std::ifstream in(dir_ / "a" / "trace.csv");
  SimTrace tr = read_trace_csv(in);
  const ExperimentConfig cfg = load_config(path);
  tr.label = cfg.controller.strategy.label();
  tr.warmup_time = (cfg.controller.h_lag + cfg.controller.intervals) * cfg.sim.dt;
  std::ostringstream row;
  write_metrics_row(row, compute_metrics(tr, true), tr, config_hash(cfg));
  const auto written = lines(slurp(dir_ / "a" / "metrics.csv"));
  ASSERT_EQ(written.size(), 2u);
  // the jump across the warm-up handoff is not part of the trace file
  auto strip_jump = [](const std::string& s) {
    auto cells = std::vector<std::string>{};
    std::istringstream in(s);
    for (std::string c; std::getline(in, c, ',');) cells.push_back(c);
    cells.at(10) = "";
    std::string out;
    for (const auto& c : cells) out += c + ",";
    return out;
  };
  EXPECT_EQ(strip_jump(row.str().substr(0, row.str().size() - 1)), strip_jump(written[1]));
}

TEST_F(Cli, SimulateDivergedExitCode) {
  nlohmann::json j = nlohmann::json::parse(slurp(config("benchmark.json")));
  j["controller"]["strategy"] = "TDC";
  j["controller"]["inertia_scale"] = 5.0;
  j["sim"]["duration"] = 1.0;
  const Outcome o = lab("simulate --config " + write("div.json", j.dump()) + " --out " +
                        (dir_ / "d").string());
  EXPECT_EQ(o.code, 3);
  EXPECT_NE(o.err.find("NumericalBlowup"), std::string::npos) << o.err;
  const auto rows = lines(o.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(fields(rows[1]), fields(rows[0]));
  std::istringstream cells(rows[1]);
  std::string cell;
  for (int i = 0; i <= 8; ++i) std::getline(cells, cell, ',');
  EXPECT_EQ(cell, "1");  // diverged column
}

TEST_F(Cli, CompareRowsFollowCommandLine) {
  const std::string path = short_benchmark(0.5, 10);
  Outcome o = lab("compare --config " + path + " --strategies TDC,TARC");
  ASSERT_EQ(o.code, 0) << o.err;
  auto rows = lines(o.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], metrics_header());
  EXPECT_EQ(rows[1].substr(0, 4), "TDC,");
  EXPECT_EQ(rows[2].substr(0, 5), "TARC,");
  o = lab("compare --config " + path + " --strategies ASMC-FD,FTDC,TDC-FD");
  ASSERT_EQ(o.code, 0) << o.err;
  rows = lines(o.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].substr(0, 8), "ASMC-FD,");
  EXPECT_EQ(rows[2].substr(0, 5), "FTDC,");
  EXPECT_EQ(rows[3].substr(0, 7), "TDC-FD,");
}

TEST_F(Cli, CompareUnknownStrategy) {
  const Outcome o = lab("compare --config " + short_benchmark(0.5, 10) + " --strategies TDC,PID");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("PID"), std::string::npos) << o.err;
}

TEST_F(Cli, SweepOneRowPerValue) {
  const std::string path = short_benchmark(0.5, 10);
  const Outcome o = lab("sweep --config " + path + " --key controller.alpha --values 1.5,2,4 --out " +
                        (dir_ / "s").string());
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = lines(slurp(dir_ / "s" / "sweep.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].substr(0, 21), "controller.alpha,1.5,");
  EXPECT_EQ(rows[3].substr(0, 19), "controller.alpha,4,");
  EXPECT_EQ(o.out, slurp(dir_ / "s" / "sweep.csv"));
  // each row hashes its own configuration
  EXPECT_NE(rows[1].substr(rows[1].rfind(',')), rows[2].substr(rows[2].rfind(',')));
}

TEST_F(Cli, SweepDelayLag) {
  const Outcome o = lab("sweep --config " + short_benchmark(0.5, 10) +
                        " --key controller.h_lag --values 1,2,4");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(lines(o.out).size(), 4u);
}

TEST_F(Cli, SweepErrors) {
  const std::string path = short_benchmark(0.5, 10);
  EXPECT_EQ(lab("sweep --config " + path + " --key controller.alpha --values \"\"").code, 1);
  const Outcome o = lab("sweep --config " + path + " --key controller.nope --values 1");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("controller.nope"), std::string::npos) << o.err;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(lab("").code, 1);
  EXPECT_EQ(lab("simulate").code, 1);
  EXPECT_EQ(lab("check-gains --config " + (dir_ / "missing.json").string()).code, 1);
  EXPECT_EQ(lab("--help").code, 0);
}

TEST(Config, CanonicalRoundTrip) {
  for (const char* name : {"benchmark.json", "gains_feasible.json", "gains_long_delay.json",
                           "setpoint_exact.json"}) {
    const ExperimentConfig a = load_config(config(name));
    const std::string text = canonical_string(a);
    const ExperimentConfig b = parse_config(text);
    EXPECT_EQ(canonical_string(b), text) << name;
    EXPECT_EQ(config_hash(a), config_hash(b)) << name;
    EXPECT_EQ(config_hash(a).size(), 16u);
  }
}

TEST(Config, HashIgnoresFormattingButNotValues) {
  const ExperimentConfig a = parse_config(R"({"controller": {"strategy": "TDC", "K1": 4, "K2": 4}})");
  const ExperimentConfig b =
      parse_config("{\n\"controller\" : { \"K2\":4.0, \"K1\":[4, 4], \"strategy\":\"TDC\" }\n}");
  EXPECT_EQ(config_hash(a), config_hash(b));
  const ExperimentConfig c = parse_config(R"({"controller": {"strategy": "TDC", "K1": 4, "K2": 5}})");
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, MatrixForms) {
  const ExperimentConfig a = parse_config(R"({"controller": {"strategy": "TDC", "K1": 4, "K2": [4, 9]}})");
  EXPECT_EQ(a.controller.K1, MatrixXd(4.0 * MatrixXd::Identity(2, 2)));
  EXPECT_EQ(a.controller.K2(1, 1), 9.0);
  EXPECT_EQ(a.controller.K2(0, 1), 0.0);
  const ExperimentConfig b =
      parse_config(R"({"controller": {"strategy": "TDC", "K1": [[4, 1], [1, 4]], "K2": 4}})");
  EXPECT_EQ(b.controller.K1(0, 1), 1.0);
}

TEST(Config, OverrideTouchesOneField) {
  const ExperimentConfig a = load_config(config("benchmark.json"));
  const ExperimentConfig b = with_override(a, "controller.alpha", 3.0);
  EXPECT_EQ(b.controller.alpha, 3.0);
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(with_override(b, "controller.alpha", a.controller.alpha)), config_hash(a));
  try {
    with_override(a, "plant.colour", 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownKey);
  }
}
