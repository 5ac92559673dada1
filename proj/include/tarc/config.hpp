#pragma once

// Experiment configuration: JSON in, validated structs out, canonical JSON
// back. Every section rejects keys it does not know. Gains have no defaults.

#include <Eigen/Dense>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tarc/controllers.hpp"
#include "tarc/error.hpp"
#include "tarc/plants.hpp"
#include "tarc/simulator.hpp"
#include "tarc/stability_cert.hpp"

namespace tarc {

using json = nlohmann::json;

/// Strategy label as used on the command line: TDC, TDC-FD, FTDC, ASMC, ASMC-FD, TARC.
struct StrategyChoice {
  Strategy strategy = Strategy::kTarc;
  VelocitySource velocity = VelocitySource::kTrue;

  std::string label() const {
    std::string s(to_string(strategy));
    if (velocity == VelocitySource::kFiniteDifference) s += "-FD";
    return s;
  }
  bool operator==(const StrategyChoice&) const = default;
};

inline std::optional<StrategyChoice> parse_strategy(const std::string& name) {
  if (name == "TDC") return StrategyChoice{Strategy::kTdc, VelocitySource::kTrue};
  if (name == "TDC-FD") return StrategyChoice{Strategy::kTdc, VelocitySource::kFiniteDifference};
  if (name == "FTDC") return StrategyChoice{Strategy::kFtdc, VelocitySource::kTrue};
  if (name == "ASMC") return StrategyChoice{Strategy::kAsmc, VelocitySource::kTrue};
  if (name == "ASMC-FD") return StrategyChoice{Strategy::kAsmc, VelocitySource::kFiniteDifference};
  if (name == "TARC") return StrategyChoice{Strategy::kTarc, VelocitySource::kTrue};
  return std::nullopt;
}

struct PlantSection {
  std::string model = "two_link";  ///< two_link | wmr
  TwoLinkParams two_link;
  WmrParams wmr;
  double uncertainty = 0.2;
  DisturbanceSpec disturbance;
  double noise_std = 0.0;
  std::uint64_t seed = 1;
};

struct ControllerSection {
  StrategyChoice strategy;
  MatrixXd K1;
  MatrixXd K2;
  int h_lag = 1;
  int degree = 2;                 ///< Lambda
  int intervals = 20;             ///< m
  double alpha = 2.0;
  std::optional<double> alpha_decrease;
  double gamma = 0.01;
  double epsilon = 1e-3;
  std::optional<double> c_hat0;
  double inertia_scale = 1.0;
  bool exact_nominal = false;
  AsmcParams asmc;
};

struct StabilitySection {
  double beta = 1.0;
  double xi = 2.0;
  MatrixXd D;
  MatrixXd Q;
  MatrixXd L;
};

struct ReferenceSection {
  std::string kind = "constant";  ///< constant | sinusoid | quadratic
  VectorXd offset;                ///< constant value, sinusoid offset, or quadratic c0
  VectorXd amplitude;
  double omega = 1.0;
  double phase_step = 0.0;
  VectorXd c1;
  VectorXd c2;
};

struct SimSection {
  double dt = 1e-3;
  double duration = 10.0;
  int record_every = 1;
  std::optional<VectorXd> initial_q;
  std::optional<VectorXd> initial_q_dot;
  double tau_jump_max = std::numeric_limits<double>::infinity();
};

struct OutputSection {
  std::string dir = ".";
  std::string trace = "trace.csv";
  std::string metrics = "metrics.csv";
  std::string report = "report.csv";
};

struct ExperimentConfig {
  PlantSection plant;
  ControllerSection controller;
  StabilitySection stability;
  ReferenceSection reference;
  SimSection sim;
  OutputSection output;

  int n() const { return 2; }
};

namespace detail {

inline std::string number_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Line of the first occurrence of each quoted path component in turn.
inline int locate_line(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::size_t start = 0;
  bool found = false;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    const std::size_t at = text.find("\"" + part + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
    found = true;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

class Section {
 public:
  Section(const json& j, std::string path, const std::string* text)
      : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string msg = key + ": " + what;
    if (text_ != nullptr) {
      const int line = locate_line(*text_, key);
      if (line > 0) msg += " (line " + std::to_string(line) + ")";
    }
    throw Error(ErrorCode::kConfigError, msg);
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, key_path(key), text_);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return number(key);
  }

  double number(const std::string& key) {
    if (!has(key)) fail(key_path(key), "is required");
    const json& v = raw(key);
    if (!v.is_number()) fail(key_path(key), "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key_path(key), "must be finite");
    return d;
  }

  std::optional<double> optional_number(const std::string& key) {
    if (!has(key) || raw(key).is_null()) return std::nullopt;
    return number(key);
  }

  double positive(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v > 0.0)) fail(key_path(key), "must be > 0, got " + number_text(v));
    return v;
  }

  double nonnegative(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v >= 0.0)) fail(key_path(key), "must be >= 0, got " + number_text(v));
    return v;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number()) fail(key_path(key), "must be an integer");
    if (v.is_number_integer()) return v.get<std::int64_t>();
    const double d = v.get<double>();
    if (d != std::floor(d) || !std::isfinite(d)) {
      fail(key_path(key), "must be an integer, got " + number_text(d));
    }
    return static_cast<std::int64_t>(d);
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key_path(key), "must be true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) fail(key_path(key), "must be a string");
    return v.get<std::string>();
  }

  std::optional<VectorXd> vector(const std::string& key, int n) {
    if (!has(key) || raw(key).is_null()) return std::nullopt;
    const json& v = raw(key);
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      fail(key_path(key), "must be an array of " + std::to_string(n) + " numbers");
    }
    VectorXd out(n);
    for (int i = 0; i < n; ++i) {
      if (!v[static_cast<std::size_t>(i)].is_number()) fail(key_path(key), "entries must be numbers");
      out[i] = v[static_cast<std::size_t>(i)].get<double>();
    }
    return out;
  }

  // Scalar -> s I, flat array -> diagonal, nested array -> full matrix.
  std::optional<MatrixXd> matrix(const std::string& key, int size) {
    if (!has(key) || raw(key).is_null()) return std::nullopt;
    const json& v = raw(key);
    if (v.is_number()) return v.get<double>() * MatrixXd::Identity(size, size);
    if (!v.is_array() || static_cast<int>(v.size()) != size) {
      fail(key_path(key), "must be a number, a diagonal of " + std::to_string(size) +
                              " entries, or a " + std::to_string(size) + "x" +
                              std::to_string(size) + " nested array");
    }
    MatrixXd out = MatrixXd::Zero(size, size);
    for (int r = 0; r < size; ++r) {
      const json& row = v[static_cast<std::size_t>(r)];
      if (row.is_number()) {
        out(r, r) = row.get<double>();
        continue;
      }
      if (!row.is_array() || static_cast<int>(row.size()) != size) {
        fail(key_path(key), "row " + std::to_string(r) + " must hold " + std::to_string(size) +
                                " numbers");
      }
      for (int c = 0; c < size; ++c) {
        const json& x = row[static_cast<std::size_t>(c)];
        if (!x.is_number()) fail(key_path(key), "entries must be numbers");
        out(r, c) = x.get<double>();
      }
    }
    return out;
  }

  MatrixXd spd(const std::string& key, int size, const MatrixXd& fallback) {
    auto m = matrix(key, size);
    if (!m) return fallback;
    if (!linalg::is_spd(*m)) fail(key_path(key), "must be symmetric positive definite");
    return *m;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(key_path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  const std::string* text_;
  std::set<std::string> seen_;
};

inline json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_json(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline std::string disturbance_name(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::kNone: return "none";
    case DisturbanceKind::kStep: return "step";
    case DisturbanceKind::kSinusoid: return "sinusoid";
    case DisturbanceKind::kBandLimited: return "band_limited";
  }
  return "none";
}

inline void parse_plant(Section s, PlantSection& p) {
  p.model = s.text("model", p.model);
  if (p.model != "two_link" && p.model != "wmr") s.fail(s.key_path("model"), "must be two_link or wmr");
  {
    Section params = s.sub("params");
    if (p.model == "two_link") {
      auto& t = p.two_link;
      t.m1 = params.positive("m1", t.m1);
      t.m2 = params.positive("m2", t.m2);
      t.l1 = params.positive("l1", t.l1);
      t.lc1 = params.positive("lc1", t.lc1);
      t.lc2 = params.positive("lc2", t.lc2);
      t.I1 = params.positive("I1", t.I1);
      t.I2 = params.positive("I2", t.I2);
      t.g = params.nonnegative("g", t.g);
      t.b1 = params.nonnegative("b1", t.b1);
      t.b2 = params.nonnegative("b2", t.b2);
      if (t.lc1 > t.l1) params.fail(params.key_path("lc1"), "must not exceed l1");
    } else {
      auto& w = p.wmr;
      w.mass = params.positive("mass", w.mass);
      w.inertia = params.positive("inertia", w.inertia);
      w.wheel_radius = params.positive("wheel_radius", w.wheel_radius);
      w.half_track = params.positive("half_track", w.half_track);
      w.friction_v = params.nonnegative("friction_v", w.friction_v);
      w.friction_w = params.nonnegative("friction_w", w.friction_w);
    }
    params.finish();
  }
  p.uncertainty = s.nonnegative("uncertainty", p.uncertainty);
  if (!(p.uncertainty < 1.0)) s.fail(s.key_path("uncertainty"), "must lie in [0, 1)");
  p.noise_std = s.nonnegative("noise_std", p.noise_std);
  const auto seed = s.integer("seed", static_cast<std::int64_t>(p.seed));
  if (seed < 0) s.fail(s.key_path("seed"), "must be >= 0");
  p.seed = static_cast<std::uint64_t>(seed);
  {
    Section d = s.sub("disturbance");
    const std::string kind = d.text("kind", disturbance_name(p.disturbance.kind));
    if (kind == "none") p.disturbance.kind = DisturbanceKind::kNone;
    else if (kind == "step") p.disturbance.kind = DisturbanceKind::kStep;
    else if (kind == "sinusoid") p.disturbance.kind = DisturbanceKind::kSinusoid;
    else if (kind == "band_limited") p.disturbance.kind = DisturbanceKind::kBandLimited;
    else d.fail(d.key_path("kind"), "must be none, step, sinusoid or band_limited");
    if (auto a = d.vector("amplitude", 2)) {
      p.disturbance.amplitude = {(*a)[0], (*a)[1]};
    }
    p.disturbance.frequency = d.positive("frequency", p.disturbance.frequency);
    p.disturbance.step_time = d.nonnegative("step_time", p.disturbance.step_time);
    const auto comps = d.integer("components", p.disturbance.components);
    if (comps < 1) d.fail(d.key_path("components"), "must be >= 1");
    p.disturbance.components = static_cast<int>(comps);
    d.finish();
  }
  s.finish();
}

inline void parse_controller(Section s, ControllerSection& c, double dt, int n) {
  const std::string name = s.text("strategy", c.strategy.label());
  const auto choice = parse_strategy(name);
  if (!choice) {
    s.fail(s.key_path("strategy"), "unknown strategy '" + name +
                                       "' (expected TDC, TDC-FD, FTDC, ASMC, ASMC-FD or TARC)");
  }
  c.strategy = *choice;
  auto k1 = s.matrix("K1", n);
  auto k2 = s.matrix("K2", n);
  if (!k1) s.fail(s.key_path("K1"), "is required (no default gains)");
  if (!k2) s.fail(s.key_path("K2"), "is required (no default gains)");
  if (!linalg::is_spd(*k1)) s.fail(s.key_path("K1"), "must be symmetric positive definite");
  if (!linalg::is_spd(*k2)) s.fail(s.key_path("K2"), "must be symmetric positive definite");
  c.K1 = *k1;
  c.K2 = *k2;

  if (s.has("h_lag") && s.has("h")) s.fail(s.key_path("h"), "give either h or h_lag, not both");
  if (s.has("h")) {
    const double h = s.positive("h", 0.0);
    const double ratio = h / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) || std::round(ratio) < 1) {
      s.fail(s.key_path("h"), "must be a positive integer multiple of sim.dt, got " +
                                  number_text(h));
    }
    c.h_lag = static_cast<int>(std::llround(ratio));
  } else {
    const auto lag = s.integer("h_lag", c.h_lag);
    if (lag < 1) s.fail(s.key_path("h_lag"), "must be >= 1");
    c.h_lag = static_cast<int>(lag);
  }
  const auto degree = s.integer("Lambda", c.degree);
  if (degree < 0 || degree > kMaxKernelDegree) {
    s.fail(s.key_path("Lambda"), "must lie in [0, " + std::to_string(kMaxKernelDegree) + "]");
  }
  c.degree = static_cast<int>(degree);
  const auto m = s.integer("m", c.intervals);
  if (m < 2 || m % 2 != 0) s.fail(s.key_path("m"), "must be even and >= 2");
  c.intervals = static_cast<int>(m);
  if (s.has("sigma")) {
    const double sigma = s.positive("sigma", 0.0);
    if (std::abs(sigma - c.intervals * dt) > 1e-9 * sigma) {
      s.fail(s.key_path("sigma"), "must equal m * sim.dt = " + number_text(c.intervals * dt));
    }
  }
  const bool filtered = c.strategy.strategy == Strategy::kFtdc || c.strategy.strategy == Strategy::kTarc;
  if (filtered && c.degree < 2) s.fail(s.key_path("Lambda"), "must be >= 2 for FTDC and TARC");

  c.alpha = s.positive("alpha", c.alpha);
  if (!(c.alpha > 1.0)) s.fail(s.key_path("alpha"), "must be > 1");
  c.alpha_decrease = s.optional_number("alpha_decrease");
  if (c.alpha_decrease && !(*c.alpha_decrease > 0.0)) {
    s.fail(s.key_path("alpha_decrease"), "must be > 0");
  }
  c.gamma = s.positive("gamma", c.gamma);
  c.epsilon = s.positive("epsilon", c.epsilon);
  c.c_hat0 = s.optional_number("c_hat0");
  if (c.c_hat0 && !(*c.c_hat0 >= 0.0)) s.fail(s.key_path("c_hat0"), "must be >= 0");
  c.inertia_scale = s.positive("inertia_scale", c.inertia_scale);
  c.exact_nominal = s.boolean("exact_nominal", c.exact_nominal);
  {
    Section a = s.sub("asmc");
    c.asmc.c_bar = a.positive("c_bar", c.asmc.c_bar);
    const std::string mode = a.text("rho_mode", c.asmc.rho_mode == RhoMode::kFixed ? "fixed" : "scaled");
    if (mode == "fixed") c.asmc.rho_mode = RhoMode::kFixed;
    else if (mode == "scaled") c.asmc.rho_mode = RhoMode::kScaled;
    else a.fail(a.key_path("rho_mode"), "must be fixed or scaled");
    c.asmc.rho = a.positive("rho", c.asmc.rho);
    c.asmc.lambda_s = a.spd("lambda_s", n,
                            c.asmc.lambda_s.size() ? c.asmc.lambda_s : MatrixXd::Identity(n, n));
    a.finish();
  }
  s.finish();
}

inline void parse_stability(Section s, StabilitySection& st, int n) {
  st.beta = s.positive("beta", st.beta);
  st.xi = s.number("xi", st.xi);
  if (!(st.xi > 1.0)) s.fail(s.key_path("xi"), "must be > 1");
  const int size = 2 * n;
  st.D = s.spd("D", size, st.D.size() ? st.D : MatrixXd::Identity(size, size));
  st.Q = s.spd("Q", size, st.Q.size() ? st.Q : MatrixXd::Identity(size, size));
  st.L = s.spd("L", size, st.L.size() ? st.L : MatrixXd(0.1 * MatrixXd::Identity(size, size)));
  s.finish();
}

inline void parse_reference(Section s, ReferenceSection& r, int n) {
  r.kind = s.text("kind", r.kind);
  if (r.kind != "constant" && r.kind != "sinusoid" && r.kind != "quadratic") {
    s.fail(s.key_path("kind"), "must be constant, sinusoid or quadratic");
  }
  const VectorXd zero = VectorXd::Zero(n);
  r.offset = s.vector("offset", n).value_or(r.offset.size() ? r.offset : zero);
  if (r.kind == "sinusoid") {
    r.amplitude = s.vector("amplitude", n).value_or(r.amplitude.size() ? r.amplitude : zero);
    r.omega = s.positive("omega", r.omega);
    r.phase_step = s.number("phase_step", r.phase_step);
  }
  if (r.kind == "quadratic") {
    r.c1 = s.vector("c1", n).value_or(r.c1.size() ? r.c1 : zero);
    r.c2 = s.vector("c2", n).value_or(r.c2.size() ? r.c2 : zero);
  }
  s.finish();
}

inline void parse_sim(Section s, SimSection& sim, int n) {
  sim.dt = s.positive("dt", sim.dt);
  sim.duration = s.positive("duration", sim.duration);
  const auto every = s.integer("record_every", sim.record_every);
  if (every < 1) s.fail(s.key_path("record_every"), "must be >= 1");
  sim.record_every = static_cast<int>(every);
  sim.initial_q = s.vector("initial_q", n);
  sim.initial_q_dot = s.vector("initial_q_dot", n);
  if (s.has("tau_jump_max")) sim.tau_jump_max = s.positive("tau_jump_max", 0.0);
  s.finish();
}

inline void parse_output(Section s, OutputSection& o) {
  o.dir = s.text("dir", o.dir);
  o.trace = s.text("trace", o.trace);
  o.metrics = s.text("metrics", o.metrics);
  o.report = s.text("report", o.report);
  s.finish();
}

}  // namespace detail

/// Parses and validates a configuration. `source` is the raw text used for
/// line numbers in diagnostics; pass nullptr when there is none.
inline ExperimentConfig config_from_json(const json& j, const std::string* source = nullptr) {
  ExperimentConfig cfg;
  detail::Section root(j, "", source);
  detail::parse_plant(root.sub("plant"), cfg.plant);
  detail::parse_sim(root.sub("sim"), cfg.sim, cfg.n());
  if (!root.has("controller")) root.fail("controller", "section is required");
  detail::parse_controller(root.sub("controller"), cfg.controller, cfg.sim.dt, cfg.n());
  detail::parse_stability(root.sub("stability"), cfg.stability, cfg.n());
  detail::parse_reference(root.sub("reference"), cfg.reference, cfg.n());
  detail::parse_output(root.sub("output"), cfg.output);
  root.finish();
  const double h = cfg.controller.h_lag * cfg.sim.dt;
  if (cfg.sim.duration < 10.0 * h) {
    root.fail("sim.duration", "must be at least 10 h = " + detail::number_text(10.0 * h));
  }
  try {
    build_error_matrices(cfg.controller.K1, cfg.controller.K2);
  } catch (const Error& e) {
    root.fail("controller.K1", std::string("gains rejected: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto byte = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(byte > 0 ? byte - 1 : 0), '\n');
    throw Error(ErrorCode::kConfigError,
                "malformed JSON at line " + std::to_string(line) + ": " + e.what());
  }
  return config_from_json(j, &text);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Fully explicit JSON; object keys come out sorted, so dump() is canonical.
inline json to_json(const ExperimentConfig& c) {
  using detail::matrix_json;
  using detail::vector_json;
  json plant;
  plant["model"] = c.plant.model;
  if (c.plant.model == "two_link") {
    const auto& t = c.plant.two_link;
    plant["params"] = {{"m1", t.m1}, {"m2", t.m2}, {"l1", t.l1}, {"lc1", t.lc1}, {"lc2", t.lc2},
                       {"I1", t.I1}, {"I2", t.I2}, {"g", t.g},   {"b1", t.b1},   {"b2", t.b2}};
  } else {
    const auto& w = c.plant.wmr;
    plant["params"] = {{"mass", w.mass},
                       {"inertia", w.inertia},
                       {"wheel_radius", w.wheel_radius},
                       {"half_track", w.half_track},
                       {"friction_v", w.friction_v},
                       {"friction_w", w.friction_w}};
  }
  plant["uncertainty"] = c.plant.uncertainty;
  plant["noise_std"] = c.plant.noise_std;
  plant["seed"] = c.plant.seed;
  json dist;
  dist["kind"] = detail::disturbance_name(c.plant.disturbance.kind);
  dist["amplitude"] = c.plant.disturbance.amplitude.empty() ? json(std::vector<double>{0.0, 0.0})
                                                            : json(c.plant.disturbance.amplitude);
  dist["frequency"] = c.plant.disturbance.frequency;
  dist["step_time"] = c.plant.disturbance.step_time;
  dist["components"] = c.plant.disturbance.components;
  plant["disturbance"] = dist;

  const auto& k = c.controller;
  json ctl;
  ctl["strategy"] = k.strategy.label();
  ctl["K1"] = matrix_json(k.K1);
  ctl["K2"] = matrix_json(k.K2);
  ctl["h_lag"] = k.h_lag;
  ctl["Lambda"] = k.degree;
  ctl["m"] = k.intervals;
  ctl["alpha"] = k.alpha;
  if (k.alpha_decrease) ctl["alpha_decrease"] = *k.alpha_decrease;
  ctl["gamma"] = k.gamma;
  ctl["epsilon"] = k.epsilon;
  if (k.c_hat0) ctl["c_hat0"] = *k.c_hat0;
  ctl["inertia_scale"] = k.inertia_scale;
  ctl["exact_nominal"] = k.exact_nominal;
  ctl["asmc"] = {{"c_bar", k.asmc.c_bar},
                 {"rho_mode", k.asmc.rho_mode == RhoMode::kFixed ? "fixed" : "scaled"},
                 {"rho", k.asmc.rho},
                 {"lambda_s", matrix_json(k.asmc.lambda_s)}};

  json st = {{"beta", c.stability.beta},
             {"xi", c.stability.xi},
             {"D", matrix_json(c.stability.D)},
             {"Q", matrix_json(c.stability.Q)},
             {"L", matrix_json(c.stability.L)}};

  json ref;
  ref["kind"] = c.reference.kind;
  ref["offset"] = vector_json(c.reference.offset);
  if (c.reference.kind == "sinusoid") {
    ref["amplitude"] = vector_json(c.reference.amplitude);
    ref["omega"] = c.reference.omega;
    ref["phase_step"] = c.reference.phase_step;
  }
  if (c.reference.kind == "quadratic") {
    ref["c1"] = vector_json(c.reference.c1);
    ref["c2"] = vector_json(c.reference.c2);
  }

  json sim = {{"dt", c.sim.dt}, {"duration", c.sim.duration}, {"record_every", c.sim.record_every}};
  if (c.sim.initial_q) sim["initial_q"] = vector_json(*c.sim.initial_q);
  if (c.sim.initial_q_dot) sim["initial_q_dot"] = vector_json(*c.sim.initial_q_dot);
  if (std::isfinite(c.sim.tau_jump_max)) sim["tau_jump_max"] = c.sim.tau_jump_max;

  json out = {{"dir", c.output.dir},
              {"trace", c.output.trace},
              {"metrics", c.output.metrics},
              {"report", c.output.report}};

  return {{"plant", plant}, {"controller", ctl}, {"stability", st},
          {"reference", ref}, {"sim", sim},       {"output", out}};
}

inline std::string canonical_string(const ExperimentConfig& c) { return to_json(c).dump(); }

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char ch : canonical_string(c)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Returns a copy with the numeric field at dotted `key` set to `value`.
inline ExperimentConfig with_override(const ExperimentConfig& c, const std::string& key,
                                      double value) {
  json j = to_json(c);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw Error(ErrorCode::kUnknownKey, "no config field named '" + key + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!node->is_number()) {
    throw Error(ErrorCode::kUnknownKey, "config field '" + key + "' is not numeric");
  }
  if (node->is_number_integer() || node->is_number_unsigned()) {
    if (value != std::floor(value)) {
      throw Error(ErrorCode::kConfigError, key + ": must be an integer, got " + detail::number_text(value));
    }
    *node = static_cast<std::int64_t>(value);
  } else {
    *node = value;
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Builders from a parsed configuration

inline PlantModel make_plant(const ExperimentConfig& c) {
  UncertaintySpec u;
  u.scale = c.plant.uncertainty;
  u.seed = c.plant.seed;
  DisturbanceSpec d = c.plant.disturbance;
  d.seed = c.plant.seed;
  if (c.plant.model == "wmr") return wmr_dynamic(c.plant.wmr, u, d, c.plant.noise_std);
  return two_link_manipulator(c.plant.two_link, u, d, c.plant.noise_std);
}

inline ReferenceTrajectory make_reference(const ExperimentConfig& c) {
  const auto& r = c.reference;
  if (r.kind == "sinusoid") return ReferenceTrajectory::sinusoid(r.offset, r.amplitude, r.omega, r.phase_step);
  if (r.kind == "quadratic") return ReferenceTrajectory::quadratic(r.offset, r.c1, r.c2);
  return ReferenceTrajectory::constant(r.offset);
}

inline GainSet make_gains(const ExperimentConfig& c) {
  return build_error_matrices(c.controller.K1, c.controller.K2);
}

inline StabilityParams make_stability_params(const ExperimentConfig& c) {
  StabilityParams p;
  p.beta = c.stability.beta;
  p.xi = c.stability.xi;
  p.D = c.stability.D;
  p.Q = c.stability.Q;
  p.L = c.stability.L;
  p.h = c.controller.h_lag * c.sim.dt;
  p.sigma_win = c.controller.intervals * c.sim.dt;
  return p;
}

/// First-derivative kernel used by the filtered certificate.
inline KernelSpec make_velocity_kernel(const ExperimentConfig& c) {
  return build_weights(c.controller.degree, 1, c.controller.intervals * c.sim.dt,
                       c.controller.intervals);
}

inline ControllerConfig make_controller(const ExperimentConfig& c,
                                        std::optional<StrategyChoice> choice = std::nullopt) {
  const StrategyChoice s = choice.value_or(c.controller.strategy);
  const auto& k = c.controller;
  const GainSet gains = make_gains(c);
  ControllerConfig cfg;
  cfg.strategy = s.strategy;
  cfg.velocity_source = s.velocity;
  cfg.gains = gains;
  cfg.dt = c.sim.dt;
  cfg.h_lag = k.h_lag;
  const double window = k.intervals * c.sim.dt;
  cfg.velocity_kernel = build_weights(std::max(k.degree, 1), 1, window, k.intervals);
  cfg.acceleration_kernel = build_weights(std::max(k.degree, 2), 2, window, k.intervals);
  cfg.P = solve_lyapunov(gains.A, c.stability.Q);
  cfg.alpha = k.alpha;
  cfg.alpha_decrease = k.alpha_decrease;
  cfg.gamma_floor = k.gamma;
  cfg.epsilon = k.epsilon;
  cfg.c_hat0 = k.c_hat0;
  cfg.asmc = k.asmc;
  cfg.exact_nominal = k.exact_nominal;
  cfg.inertia_scale = k.inertia_scale;
  validate(cfg);
  return cfg;
}

inline SimConfig make_sim(const ExperimentConfig& c) {
  SimConfig s;
  s.dt = c.sim.dt;
  s.duration = c.sim.duration;
  s.seed = c.plant.seed;
  s.record_every = c.sim.record_every;
  s.initial_q = c.sim.initial_q;
  s.initial_q_dot = c.sim.initial_q_dot;
  s.tau_jump_max = c.sim.tau_jump_max;
  return s;
}

/// Certificate matching the strategy: Theta for FTDC and TARC, Psi otherwise.
inline StabilityCertificate make_certificate(const ExperimentConfig& c,
                                             std::optional<StrategyChoice> choice = std::nullopt) {
  const StrategyChoice s = choice.value_or(c.controller.strategy);
  const GainSet gains = make_gains(c);
  const StabilityParams p = make_stability_params(c);
  if (s.strategy == Strategy::kFtdc || s.strategy == Strategy::kTarc) {
    const KernelSpec kernel = make_velocity_kernel(c);
    return assemble_theta(gains, p, kernel);
  }
  return assemble_psi(gains, p);
}

}  // namespace tarc
