#pragma once

// Fixed-step closed-loop simulation: RK4 on the plant state, zero-order hold
// on the torque, one controller tick per step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "tarc/controllers.hpp"
#include "tarc/error.hpp"
#include "tarc/plants.hpp"
#include "tarc/stability_cert.hpp"

namespace tarc {

struct SimConfig {
  double dt = 1e-3;
  double duration = 10.0;
  std::uint64_t seed = 1;
  int record_every = 1;
  std::optional<VectorXd> initial_q;      ///< defaults to q_d(0)
  std::optional<VectorXd> initial_q_dot;  ///< defaults to q_d'(0)
  double tau_jump_max = std::numeric_limits<double>::infinity();
  double blowup_limit = 1e6;

  std::int64_t steps() const { return std::llround(duration / dt); }
};

struct SimTrace {
  int n = 0;
  std::string label;
  std::vector<double> t;
  std::vector<VectorXd> q;
  std::vector<VectorXd> q_dot;
  std::vector<VectorXd> q_meas;
  std::vector<VectorXd> q_ref;
  std::vector<VectorXd> e1;
  std::vector<VectorXd> tau;
  std::vector<VectorXd> q_dot_est;
  std::vector<double> c_hat;
  std::vector<double> s_norm;

  double dt = 0.0;
  double warmup_time = 0.0;
  double tau_jump = 0.0;           ///< ||tau|| change across the warm-up handoff
  bool tau_jump_exceeded = false;
  bool diverged = false;
  std::int64_t diverged_step = -1;
  std::string diagnostic;
  std::vector<std::string> warnings;

  std::size_t size() const { return t.size(); }
};

namespace detail {

inline bool finite(const VectorXd& v) { return v.allFinite(); }

inline void rk4_step(const PlantModel& plant, VectorXd& q, VectorXd& qd, const VectorXd& tau,
                     double t, double dt) {
  const VectorXd a1 = accelerate(plant, q, qd, tau, t);
  const VectorXd q2 = q + 0.5 * dt * qd, v2 = qd + 0.5 * dt * a1;
  const VectorXd a2 = accelerate(plant, q2, v2, tau, t + 0.5 * dt);
  const VectorXd q3 = q + 0.5 * dt * v2, v3 = qd + 0.5 * dt * a2;
  const VectorXd a3 = accelerate(plant, q3, v3, tau, t + 0.5 * dt);
  const VectorXd q4 = q + dt * v3, v4 = qd + dt * a3;
  const VectorXd a4 = accelerate(plant, q4, v4, tau, t + dt);
  q += dt / 6.0 * (qd + 2.0 * v2 + 2.0 * v3 + v4);
  qd += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
}

}  // namespace detail

/// Runs one closed loop. Divergence (non-finite values, state norm above the
/// blow-up limit, singular inertia) ends the run and is recorded in the trace.
inline SimTrace run(const PlantModel& plant, const ControllerConfig& controller_cfg,
                    const ReferenceTrajectory& reference, const SimConfig& sim,
                    const StabilityCertificate* certificate = nullptr) {
  if (!(sim.dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  if (sim.record_every < 1) throw Error(ErrorCode::kInvalidArgument, "record_every must be >= 1");
  if (std::abs(controller_cfg.dt - sim.dt) > 1e-12 * sim.dt) {
    throw Error(ErrorCode::kInvalidArgument, "controller and simulator dt differ");
  }
  if (sim.duration < 10.0 * controller_cfg.h_lag * sim.dt) {
    throw Error(ErrorCode::kInvalidArgument, "duration must be at least 10 h");
  }
  if (controller_cfg.n() != plant.n) {
    throw Error(ErrorCode::kDimensionMismatch, "controller and plant dimensions differ");
  }

  Controller controller(controller_cfg, plant.M_hat, plant.N_hat_model);
  SimTrace trace;
  trace.n = plant.n;
  trace.label = std::string(to_string(controller_cfg.strategy));
  trace.dt = sim.dt;
  trace.warmup_time = controller.warmup_time();
  if (certificate != nullptr && !certificate->feasible &&
      (controller_cfg.strategy == Strategy::kFtdc || controller_cfg.strategy == Strategy::kTarc)) {
    trace.warnings.push_back("stability certificate is not feasible (lambda_min = " +
                             std::to_string(certificate->lambda_min) + ")");
  }

  const ReferenceSample ref0 = reference(0.0);
  VectorXd q = sim.initial_q.value_or(ref0.q);
  VectorXd qd = sim.initial_q_dot.value_or(ref0.q_dot);
  if (q.size() != plant.n || qd.size() != plant.n) {
    throw Error(ErrorCode::kDimensionMismatch, "initial state has the wrong dimension");
  }

  std::mt19937_64 rng(sim.seed);
  const auto h = static_cast<std::size_t>(controller_cfg.h_lag);
  std::deque<VectorXd> accel_history;  // true q'' at past samples, newest at back
  const std::int64_t total = sim.steps();
  const auto handoff = static_cast<std::int64_t>(controller.warmup_steps());
  VectorXd previous_tau;

  auto fail = [&](std::int64_t k, std::string why) {
    trace.diverged = true;
    trace.diverged_step = k;
    trace.diagnostic = std::move(why);
  };

  for (std::int64_t k = 0; k <= total; ++k) {
    const double t = static_cast<double>(k) * sim.dt;
    Measurement meas;
    meas.q = measure(plant, q, rng);
    meas.q_dot = qd;
    meas.q_ddot_h = accel_history.size() >= h ? accel_history[accel_history.size() - h]
                                              : VectorXd::Zero(plant.n);
    const ReferenceSample ref = reference(t);

    StepResult out;
    VectorXd accel;
    try {
      out = controller.step(t, meas, ref);
      if (!detail::finite(out.tau)) {
        fail(k, "non-finite torque");
        break;
      }
      accel = accelerate(plant, q, qd, out.tau, t);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kIllConditionedInertia &&
          e.code() != ErrorCode::kIllConditionedMhat) {
        throw;
      }
      fail(k, e.what());
      break;
    }
    accel_history.push_back(accel);
    if (accel_history.size() > h + 1) accel_history.pop_front();

    if (k == handoff && k > 0) {
      trace.tau_jump = (out.tau - previous_tau).norm();
      trace.tau_jump_exceeded = trace.tau_jump > sim.tau_jump_max;
    }
    previous_tau = out.tau;

    if (k % sim.record_every == 0) {
      trace.t.push_back(t);
      trace.q.push_back(q);
      trace.q_dot.push_back(qd);
      trace.q_meas.push_back(meas.q);
      trace.q_ref.push_back(ref.q);
      trace.e1.push_back(q - ref.q);
      trace.tau.push_back(out.tau);
      trace.q_dot_est.push_back(out.q_dot_used);
      trace.c_hat.push_back(out.c_hat);
      trace.s_norm.push_back(out.s_norm);
    }
    if (k == total) break;

    try {
      detail::rk4_step(plant, q, qd, out.tau, t, sim.dt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kIllConditionedInertia) throw;
      fail(k + 1, e.what());
      break;
    }
    if (!detail::finite(q) || !detail::finite(qd)) {
      fail(k + 1, "non-finite plant state");
      break;
    }
    if (std::max(q.norm(), qd.norm()) > sim.blowup_limit) {
      fail(k + 1, "state norm exceeded the blow-up limit");
      break;
    }
  }
  return trace;
}

struct Metrics {
  std::string label;
  double rms_e1 = 0.0;
  double max_e1 = 0.0;
  double control_energy = 0.0;    ///< integral of ||tau||^2
  double chattering_index = 0.0;  ///< total variation of tau per second
  double c_hat_final = 0.0;
  double c_hat_max = 0.0;
  double settle_time = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

/// Summary statistics over the recorded samples, optionally restricted to
/// the span after the controller's warm-up.
inline Metrics compute_metrics(const SimTrace& trace, bool post_warmup_only,
                               double settle_threshold = 1e-2) {
  std::size_t first = 0;
  if (post_warmup_only) {
    while (first < trace.size() && trace.t[first] < trace.warmup_time - 1e-12) ++first;
  }
  if (first >= trace.size()) throw Error(ErrorCode::kEmptyTrace, "no samples in the selected span");

  Metrics m;
  m.label = trace.label;
  m.diverged = trace.diverged;
  const std::size_t last = trace.size() - 1;
  double sum_sq = 0.0;
  for (std::size_t i = first; i <= last; ++i) {
    const double e = trace.e1[i].norm();
    sum_sq += e * e;
    m.max_e1 = std::max(m.max_e1, e);
    m.c_hat_max = std::max(m.c_hat_max, trace.c_hat[i]);
    if (i < last) {
      const double step = trace.t[i + 1] - trace.t[i];
      m.control_energy += trace.tau[i].squaredNorm() * step;
      m.chattering_index += (trace.tau[i + 1] - trace.tau[i]).norm();
    }
  }
  m.rms_e1 = std::sqrt(sum_sq / static_cast<double>(last - first + 1));
  const double span = trace.t[last] - trace.t[first];
  m.chattering_index = span > 0.0 ? m.chattering_index / span : 0.0;
  m.c_hat_final = trace.c_hat[last];

  std::size_t settled = last + 1;
  for (std::size_t i = last + 1; i-- > first;) {
    if (trace.e1[i].norm() >= settle_threshold) break;
    settled = i;
  }
  if (settled <= last && !trace.diverged) m.settle_time = trace.t[settled];
  return m;
}

/// Parallelism cap for sweeps: TARC_LAB_THREADS, else the hardware count.
inline unsigned sweep_threads() {
  if (const char* env = std::getenv("TARC_LAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Evaluates `job(i)` for i in [0, count) on up to `threads` workers;
/// results keep index order.
template <typename Job>
auto parallel_map(std::size_t count, unsigned threads, Job job)
    -> std::vector<decltype(job(std::size_t{}))> {
  using Result = decltype(job(std::size_t{}));
  std::vector<Result> results(count);
  threads = std::max(1u, threads);
  for (std::size_t start = 0; start < count; start += threads) {
    std::vector<std::future<Result>> batch;
    const std::size_t stop = std::min(count, start + threads);
    for (std::size_t i = start; i < stop; ++i) {
      batch.push_back(std::async(threads == 1 ? std::launch::deferred : std::launch::async, job, i));
    }
    for (std::size_t i = start; i < stop; ++i) results[i] = batch[i - start].get();
  }
  return results;
}

struct StrategySetup {
  std::string label;
  ControllerConfig controller;
};

struct ComparisonRow {
  Metrics metrics;
  SimTrace trace;
};

/// Runs each strategy on the same plant, reference, and seed.
inline std::vector<ComparisonRow> compare(const PlantModel& plant,
                                          const std::vector<StrategySetup>& strategies,
                                          const ReferenceTrajectory& reference,
                                          const SimConfig& sim, unsigned threads = 1) {
  return parallel_map(strategies.size(), threads, [&](std::size_t i) {
    ComparisonRow row;
    row.trace = run(plant, strategies[i].controller, reference, sim);
    row.trace.label = strategies[i].label;
    row.metrics = compute_metrics(row.trace, true);
    return row;
  });
}

/// Least-squares slope of ||e1|| against time over the final `fraction` of the trace.
inline double late_error_trend(const SimTrace& trace, double fraction = 1.0 / 3.0) {
  if (trace.size() < 3) throw Error(ErrorCode::kEmptyTrace, "trace too short for a trend");
  const auto first = static_cast<std::size_t>(std::floor((1.0 - fraction) * trace.size()));
  double st = 0, se = 0, stt = 0, ste = 0;
  const double count = static_cast<double>(trace.size() - first);
  for (std::size_t i = first; i < trace.size(); ++i) {
    const double t = trace.t[i], e = trace.e1[i].norm();
    st += t;
    se += e;
    stt += t * t;
    ste += t * e;
  }
  const double denom = count * stt - st * st;
  return denom > 0.0 ? (count * ste - st * se) / denom : 0.0;
}

}  // namespace tarc
