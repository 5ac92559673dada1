// tarc_lab: certificates, delay search and closed-loop experiments from a
// JSON configuration.
//
// Exit codes: 0 success / feasible, 1 error, 2 infeasible, 3 diverged run.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tarc/config.hpp"
#include "tarc/report.hpp"

namespace fs = std::filesystem;
using namespace tarc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitDiverged = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.plant.seed = *c.seed;
  return cfg;
}

fs::path out_dir(const Common& c, const ExperimentConfig& cfg) {
  fs::path dir = c.out.empty() ? fs::path(cfg.output.dir) : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  return f;
}

std::string vec_text(const VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt17(v[i]);
  return s;
}

int check_gains(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const std::string hash = config_hash(cfg);
  const GainSet gains = make_gains(cfg);
  const StabilityParams params = make_stability_params(cfg);
  const StabilityCertificate psi = assemble_psi(gains, params);
  std::optional<StabilityCertificate> theta;
  if (cfg.controller.degree >= 1) theta = assemble_theta(gains, params, make_velocity_kernel(cfg));

  std::printf("config_hash %s\n", hash.c_str());
  std::printf("h %s\n", fmt17(params.h).c_str());
  std::printf("P_eigenvalues %s\n", vec_text(linalg::symmetric_eigenvalues(psi.P)).c_str());
  std::printf("lyapunov_residual %s\n", fmt17(lyapunov_residual(gains.A, psi.P, params.Q)).c_str());
  std::printf("lambda_min_psi %s\n", fmt17(psi.lambda_min).c_str());
  if (theta) std::printf("lambda_min_theta %s\n", fmt17(theta->lambda_min).c_str());

  const Strategy s = cfg.controller.strategy.strategy;
  const bool filtered = s == Strategy::kFtdc || s == Strategy::kTarc;
  const StabilityCertificate& verdict = (filtered && theta) ? *theta : psi;
  std::printf("certificate %s\n", std::string(to_string(verdict.kind)).c_str());
  std::printf("feasible %s\n", verdict.feasible ? "true" : "false");

  if (!c.out.empty()) {
    auto f = open_out(out_dir(c, cfg) / cfg.output.report);
    write_certificate_record(f, psi, hash, true);
    if (theta) write_certificate_record(f, *theta, hash, false);
  }
  return verdict.feasible ? kExitOk : kExitInfeasible;
}

int max_delay(const Common& c, std::optional<double> h_hi, double h_cap) {
  const ExperimentConfig cfg = load(c);
  const GainSet gains = make_gains(cfg);
  const StabilityParams params = make_stability_params(cfg);
  const Strategy s = cfg.controller.strategy.strategy;
  const bool filtered = s == Strategy::kFtdc || s == Strategy::kTarc;
  const KernelSpec kernel = make_velocity_kernel(cfg);
  DelayBracket bracket;
  bracket.h_lo = cfg.sim.dt;
  bracket.h_hi = h_hi;
  bracket.h_cap = h_cap;
  const auto kind = filtered ? CertificateKind::kFtdc : CertificateKind::kTdc;
  std::printf("certificate %s\n", std::string(to_string(kind)).c_str());
  try {
    const DelaySearchResult r =
        max_feasible_delay(gains, params, kind, filtered ? &kernel : nullptr, bracket);
    std::printf("h_star %s\n", fmt17(r.h_star).c_str());
    std::printf("bracket %s %s\n", fmt17(r.bracket_lo).c_str(), fmt17(r.bracket_hi).c_str());
    std::printf("feasible_below %s\n", r.feasible_below ? "true" : "false");
    std::printf("feasible_above %s\n", r.feasible_above ? "true" : "false");
    std::printf("evaluations %d\n", r.evaluations);
    return kExitOk;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoFeasiblePoint) throw;
    std::printf("h_star none\n");
    std::fprintf(stderr, "%s\n", e.what());
    return kExitInfeasible;
  }
}

int simulate(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const std::string hash = config_hash(cfg);
  const PlantModel plant = make_plant(cfg);
  const ControllerConfig controller = make_controller(cfg);
  const StabilityCertificate cert = make_certificate(cfg);
  SimTrace trace = run(plant, controller, make_reference(cfg), make_sim(cfg), &cert);
  trace.label = cfg.controller.strategy.label();
  for (const auto& w : trace.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  const fs::path dir = out_dir(c, cfg);
  {
    auto f = open_out(dir / cfg.output.trace);
    write_trace_csv(f, trace);
  }
  const Metrics m = compute_metrics(trace, true);
  {
    auto f = open_out(dir / cfg.output.metrics);
    f << metrics_header() << '\n';
    write_metrics_row(f, m, trace, hash);
  }
  std::printf("%s\n", metrics_header());
  std::ostringstream row;
  write_metrics_row(row, m, trace, hash);
  std::printf("%s", row.str().c_str());
  if (trace.diverged) {
    std::fprintf(stderr, "NumericalBlowup: run diverged at step %lld: %s\n",
                 static_cast<long long>(trace.diverged_step), trace.diagnostic.c_str());
    return kExitDiverged;
  }
  return kExitOk;
}

std::vector<StrategyChoice> parse_list(const std::vector<std::string>& names) {
  std::vector<StrategyChoice> out;
  for (const auto& name : names) {
    const auto s = parse_strategy(name);
    if (!s) {
      throw Error(ErrorCode::kConfigError,
                  "unknown strategy '" + name + "' (expected TDC, TDC-FD, FTDC, ASMC, ASMC-FD or TARC)");
    }
    out.push_back(*s);
  }
  return out;
}

int compare_cmd(const Common& c, const std::vector<std::string>& names) {
  const auto choices = parse_list(names);
  if (choices.empty()) throw Error(ErrorCode::kConfigError, "--strategies is empty");
  const ExperimentConfig cfg = load(c);
  const std::string hash = config_hash(cfg);
  std::vector<StrategySetup> setups;
  for (const auto& s : choices) setups.push_back({s.label(), make_controller(cfg, s)});
  const auto rows =
      compare(make_plant(cfg), setups, make_reference(cfg), make_sim(cfg), sweep_threads());

  std::ostringstream csv;
  csv << metrics_header() << '\n';
  bool diverged = false;
  for (const auto& r : rows) {
    write_metrics_row(csv, r.metrics, r.trace, hash);
    diverged = diverged || r.trace.diverged;
  }
  std::printf("%s", csv.str().c_str());
  if (!c.out.empty()) {
    auto f = open_out(out_dir(c, cfg) / cfg.output.metrics);
    f << csv.str();
  }
  return diverged ? kExitDiverged : kExitOk;
}

std::vector<double> parse_values(const std::vector<std::string>& tokens) {
  std::vector<double> out;
  for (const auto& tok : tokens) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw Error(ErrorCode::kConfigError, "--values: not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

int sweep_cmd(const Common& c, const std::string& key, const std::vector<std::string>& tokens) {
  const std::vector<double> values = parse_values(tokens);
  if (values.empty()) throw Error(ErrorCode::kConfigError, "--values is empty");
  const ExperimentConfig base = load(c);
  std::vector<ExperimentConfig> configs;
  for (const double v : values) configs.push_back(with_override(base, key, v));
  struct Row {
    Metrics metrics;
    SimTrace trace;
    std::string hash;
  };
  const auto rows = parallel_map(configs.size(), sweep_threads(), [&](std::size_t i) {
    const ExperimentConfig& cfg = configs[i];
    Row r;
    r.trace = run(make_plant(cfg), make_controller(cfg), make_reference(cfg), make_sim(cfg));
    r.trace.label = cfg.controller.strategy.label();
    r.metrics = compute_metrics(r.trace, true);
    r.hash = config_hash(cfg);
    return r;
  });

  std::ostringstream csv;
  csv << "key,value," << metrics_header() << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << key << ',' << fmt17(values[i]) << ',';
    write_metrics_row(csv, rows[i].metrics, rows[i].trace, rows[i].hash);
  }
  std::printf("%s", csv.str().c_str());
  if (!c.out.empty()) {
    auto f = open_out(out_dir(c, base) / "sweep.csv");
    f << csv.str();
  }
  return kExitOk;
}

void add_common(CLI::App* cmd, Common& c, bool with_out_seed) {
  cmd->add_option("--config", c.config, "experiment configuration (JSON)")->required();
  cmd->add_option("--out", c.out, "output directory");
  if (with_out_seed) cmd->add_option("--seed", c.seed, "override plant.seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-delayed adaptive robust control lab"};
  app.require_subcommand(1);

  Common check_opts, delay_opts, sim_opts, cmp_opts, sweep_opts;
  auto* check = app.add_subcommand("check-gains", "stability certificate for the configured gains");
  add_common(check, check_opts, false);

  auto* delay = app.add_subcommand("max-delay", "largest delay keeping the certificate feasible");
  add_common(delay, delay_opts, false);
  std::optional<double> h_hi;
  double h_cap = 100.0;
  delay->add_option("--h-hi", h_hi, "infeasible upper bracket (default: doubling probe)");
  delay->add_option("--h-cap", h_cap, "give up probing above this delay");

  auto* sim = app.add_subcommand("simulate", "closed-loop run, writes trace and metrics CSV");
  add_common(sim, sim_opts, true);

  auto* cmp = app.add_subcommand("compare", "same scenario under several strategies");
  add_common(cmp, cmp_opts, true);
  std::vector<std::string> strategies;
  cmp->add_option("--strategies", strategies, "comma-separated strategy names")
      ->required()
      ->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "one run per value of a numeric config field");
  add_common(sweep, sweep_opts, true);
  std::string key;
  std::vector<std::string> values;
  sweep->add_option("--key", key, "dotted config path, e.g. controller.alpha")->required();
  sweep->add_option("--values", values, "comma-separated values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*check) return check_gains(check_opts);
    if (*delay) return max_delay(delay_opts, h_hi, h_cap);
    if (*sim) return simulate(sim_opts);
    if (*cmp) return compare_cmd(cmp_opts, strategies);
    if (*sweep) return sweep_cmd(sweep_opts, key, values);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
