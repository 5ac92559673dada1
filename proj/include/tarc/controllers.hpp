#pragma once

// Time-delayed control laws for Euler-Lagrange plants.
//
//   TDC   tau = M^(q) u + tau_h - M^(q_h) q''_h,  u = q''_d - K2 e1' - K1 e1
//   FTDC  as TDC, with q' and q''_h replaced by kernel estimates from positions
//   TARC  FTDC plus the switching term -alpha c^ s / max(||s||, eps), where
//         c^ grows while ||s|| exceeds its delayed value and shrinks otherwise
//   ASMC  nominal-model sliding mode baseline with threshold-based gain law
//
// All adaptive gains are integrated by explicit Euler at the control rate.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "tarc/derivative_estimator.hpp"
#include "tarc/error.hpp"
#include "tarc/linalg.hpp"
#include "tarc/plants.hpp"
#include "tarc/stability_cert.hpp"

namespace tarc {

enum class Strategy { kTdc, kFtdc, kAsmc, kTarc };
enum class VelocitySource { kTrue, kFiniteDifference };
enum class RhoMode { kFixed, kScaled };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kTdc: return "TDC";
    case Strategy::kFtdc: return "FTDC";
    case Strategy::kAsmc: return "ASMC";
    case Strategy::kTarc: return "TARC";
  }
  return "?";
}

struct AsmcParams {
  double c_bar = 10.0;  ///< adaptive gain
  RhoMode rho_mode = RhoMode::kFixed;
  double rho = 0.1;     ///< fixed threshold
  MatrixXd lambda_s;    ///< sliding-surface slope, n x n SPD
};

struct ControllerConfig {
  Strategy strategy = Strategy::kTarc;
  GainSet gains;
  int h_lag = 1;                   ///< delay in samples, h = h_lag * dt
  double dt = 1e-3;
  KernelSpec velocity_kernel;      ///< order 1
  KernelSpec acceleration_kernel;  ///< order 2, same degree and window
  MatrixXd P;                      ///< 2n x 2n Lyapunov solution; required by TARC
  double alpha = 2.0;
  std::optional<double> alpha_decrease;  ///< alpha while ||s|| <= ||s_h||; defaults to alpha
  double gamma_floor = 0.01;
  double epsilon = 1e-3;
  std::optional<double> c_hat0;    ///< defaults to gamma_floor
  AsmcParams asmc;
  VelocitySource velocity_source = VelocitySource::kTrue;  ///< TDC and ASMC only
  bool exact_nominal = false;      ///< TDC: use the nominal model for N^ instead of delayed data
  /// Constant factor on M^ for the time-delayed laws (TDC, FTDC, TARC). The
  /// delayed-estimation loop tau_k = tau_{k-h} + M^ (u - q''_h) is only stable
  /// when M^ q''_h responds to tau with a loop gain well below one, and the
  /// kernel acceleration estimate adds roughly sigma/2 of lag.
  double inertia_scale = 1.0;

  int n() const { return gains.n; }
};

/// Builds a configuration with matching first- and second-derivative kernels.
inline ControllerConfig make_controller_config(Strategy strategy, GainSet gains, double dt,
                                               int h_lag = 1, int degree = 2, int intervals = 20) {
  ControllerConfig cfg;
  cfg.strategy = strategy;
  cfg.gains = std::move(gains);
  cfg.dt = dt;
  cfg.h_lag = h_lag;
  const double window = intervals * dt;
  cfg.velocity_kernel = build_weights(degree, 1, window, intervals);
  cfg.acceleration_kernel = build_weights(degree, std::min(2, degree), window, intervals);
  cfg.asmc.lambda_s = MatrixXd::Identity(cfg.gains.n, cfg.gains.n);
  return cfg;
}

inline void validate(const ControllerConfig& cfg) {
  if (cfg.gains.n <= 0) throw Error(ErrorCode::kInvalidArgument, "controller gains are not set");
  if (cfg.h_lag < 1) throw Error(ErrorCode::kInvalidArgument, "h_lag must be >= 1");
  if (!(cfg.dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  if (!(cfg.alpha > 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be > 1");
  if (cfg.alpha_decrease && !(*cfg.alpha_decrease > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha_decrease must be positive");
  }
  if (!(cfg.inertia_scale > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "inertia_scale must be positive");
  }
  if (!(cfg.gamma_floor > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be positive");
  if (!(cfg.epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  if (cfg.c_hat0 && !(*cfg.c_hat0 >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "initial switching gain must be >= 0");
  }
  const bool filtered = cfg.strategy == Strategy::kFtdc || cfg.strategy == Strategy::kTarc;
  if (filtered) {
    if (cfg.velocity_kernel.order != 1 || cfg.acceleration_kernel.order != 2) {
      throw Error(ErrorCode::kKernelOrderMismatch,
                  "filtered control needs first- and second-derivative kernels");
    }
    if (std::abs(cfg.velocity_kernel.window - cfg.velocity_kernel.intervals * cfg.dt) >
        1e-9 * cfg.velocity_kernel.window) {
      throw Error(ErrorCode::kInvalidArgument, "kernel window must equal intervals * dt");
    }
  }
  if (cfg.strategy == Strategy::kTarc) {
    if (cfg.P.rows() != 2 * cfg.n() || cfg.P.cols() != 2 * cfg.n()) {
      throw Error(ErrorCode::kInfeasibleCertificate, "TARC needs the 2n x 2n certificate matrix P");
    }
  }
  if (cfg.strategy == Strategy::kAsmc) {
    if (!(cfg.asmc.c_bar > 0.0)) throw Error(ErrorCode::kInvalidArgument, "c_bar must be positive");
    if (cfg.asmc.rho_mode == RhoMode::kFixed && !(cfg.asmc.rho > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "fixed rho must be positive");
    }
    if (cfg.asmc.lambda_s.rows() != cfg.n()) {
      throw Error(ErrorCode::kDimensionMismatch, "lambda_s must be n x n");
    }
    linalg::require_spd(cfg.asmc.lambda_s, "lambda_s");
  }
}

// ---------------------------------------------------------------------------
// Control-law building blocks

/// u = q''_d - K2 e1' - K1 e1
inline VectorXd auxiliary_input(const GainSet& g, const VectorXd& e1, const VectorXd& e1_dot,
                                const VectorXd& qdd_ref) {
  return qdd_ref - g.K2 * e1_dot - g.K1 * e1;
}

/// N^ = tau_h - M^(q_h) q''_h
inline VectorXd delayed_lumped_estimate(const MatrixXd& m_hat_h, const VectorXd& tau_h,
                                        const VectorXd& qdd_h) {
  return tau_h - m_hat_h * qdd_h;
}

/// s = B^T P [e1; e1']
inline VectorXd sliding_variable(const MatrixXd& P, const VectorXd& e1, const VectorXd& e1_dot) {
  const Eigen::Index n = e1.size();
  VectorXd e(2 * n);
  e << e1, e1_dot;
  return P.bottomRows(n) * e;
}

/// -alpha c^ s / ||s|| outside the boundary layer, -alpha c^ s / eps inside.
inline VectorXd switching_law(const VectorXd& s, double c_hat, double alpha, double epsilon) {
  const double norm = s.norm();
  return -alpha * c_hat * s / (norm >= epsilon ? norm : epsilon);
}

/// d c^/dt for the delay-referenced law with f(e) = ||s|| - ||s_h||.
inline double tarc_gain_rate(double c_hat, double s_norm, double s_norm_h, double gamma) {
  if (c_hat <= gamma) return gamma;
  return (s_norm - s_norm_h > 0.0) ? s_norm : -s_norm;
}

/// d c^/dt for the threshold law; sgn(0) is taken as -1.
inline double asmc_gain_rate(double c_hat, double sbar_norm, double rho, double c_bar,
                             double gamma) {
  if (c_hat <= gamma) return gamma;
  return c_bar * sbar_norm * (sbar_norm - rho > 0.0 ? 1.0 : -1.0);
}

inline double asmc_threshold(const AsmcParams& p, double c_hat, double sample_time) {
  return p.rho_mode == RhoMode::kFixed ? p.rho : 4.0 * c_hat * sample_time;
}

// ---------------------------------------------------------------------------

struct ControllerState {
  double c_hat = 0.0;
  HistoryBuffer buffer;
  double last_s_norm = 0.0;
  bool warm = false;
  std::size_t steps = 0;
};

struct Measurement {
  VectorXd q;                       ///< measured position
  std::optional<VectorXd> q_dot;    ///< true velocity, when the strategy is allowed to see it
  std::optional<VectorXd> q_ddot_h; ///< true acceleration at t - h
};

struct StepResult {
  VectorXd tau;
  VectorXd u;
  VectorXd e1;
  VectorXd q_dot_used;  ///< velocity (measured or estimated) fed to the law
  double s_norm = 0.0;
  double c_hat = 0.0;   ///< gain used in this step, before the adaptive update
  bool warmup = false;
};

/// Owns the state of one control loop and dispatches to the configured law.
/// The history must contain the current sample at lag 0 before a law runs;
/// `step` takes care of that.
class Controller {
 public:
  Controller(ControllerConfig cfg, InertiaMap m_hat, ForceMap n_hat_model = {})
      : cfg_(std::move(cfg)), m_hat_(std::move(m_hat)), n_hat_model_(std::move(n_hat_model)) {
    validate(cfg_);
    if (!m_hat_) throw Error(ErrorCode::kInvalidArgument, "nominal inertia map is required");
    if ((cfg_.strategy == Strategy::kAsmc || cfg_.exact_nominal) && !n_hat_model_) {
      throw Error(ErrorCode::kInvalidArgument, "this strategy needs a nominal force model");
    }
    const auto capacity =
        static_cast<std::size_t>(cfg_.h_lag + cfg_.velocity_kernel.intervals + 3);
    state_.buffer = HistoryBuffer(capacity, cfg_.dt);
    state_.c_hat = cfg_.c_hat0.value_or(cfg_.gamma_floor);
  }

  const ControllerConfig& config() const { return cfg_; }
  const ControllerState& state() const { return state_; }

  /// Number of initial steps that run the PD start-up law.
  std::size_t warmup_steps() const {
    if (cfg_.strategy == Strategy::kTdc && cfg_.exact_nominal) return 0;
    return static_cast<std::size_t>(cfg_.h_lag + cfg_.velocity_kernel.intervals);
  }

  double warmup_time() const { return static_cast<double>(warmup_steps()) * cfg_.dt; }

  StepResult step(double t, const Measurement& meas, const ReferenceSample& ref) {
    HistorySample sample;
    sample.t = t;
    sample.q = meas.q;
    state_.buffer.push(std::move(sample));
    StepResult r;
    if (state_.steps < warmup_steps()) {
      r = warmup_step(ref);
    } else {
      state_.warm = true;
      switch (cfg_.strategy) {
        case Strategy::kTdc: r = tdc_step(meas, ref, t); break;
        case Strategy::kFtdc: r = filtered_step(ref, false); break;
        case Strategy::kTarc: r = filtered_step(ref, true); break;
        case Strategy::kAsmc: r = asmc_step(meas, ref, t); break;
      }
    }
    HistorySample& newest = state_.buffer.newest();
    newest.tau = r.tau;
    newest.u = r.u;
    newest.s_norm = r.s_norm;
    state_.last_s_norm = r.s_norm;
    ++state_.steps;
    return r;
  }

 private:
  MatrixXd nominal_inertia(const VectorXd& q) const {
    MatrixXd m = m_hat_(q);
    if (cfg_.strategy != Strategy::kAsmc) m *= cfg_.inertia_scale;
    if (linalg::spd_condition(m) > 1e8) {
      throw Error(ErrorCode::kIllConditionedMhat, "nominal inertia is singular or ill-conditioned");
    }
    return m;
  }

  const HistorySample& lagged(std::size_t lag) const { return state_.buffer.at_lag(lag); }

  VectorXd fd_velocity(std::size_t lag) const {
    return (lagged(lag).q - lagged(lag + 1).q) / cfg_.dt;
  }

  VectorXd fd_acceleration(std::size_t lag) const {
    return (lagged(lag).q - 2.0 * lagged(lag + 1).q + lagged(lag + 2).q) / (cfg_.dt * cfg_.dt);
  }

  double report_s_norm(const VectorXd& e1, const VectorXd& e1_dot) const {
    if (cfg_.P.rows() != 2 * cfg_.n()) return 0.0;
    return sliding_variable(cfg_.P, e1, e1_dot).norm();
  }

  // PD-only start-up: tau = M^ (q''_d - K2 e1'_fd - K1 e1), no delayed terms.
  StepResult warmup_step(const ReferenceSample& ref) const {
    StepResult r;
    r.warmup = true;
    const VectorXd& q = lagged(0).q;
    r.q_dot_used = state_.buffer.warm_for(1) ? fd_velocity(0) : ref.q_dot;
    r.e1 = q - ref.q;
    const VectorXd e1_dot = r.q_dot_used - ref.q_dot;
    r.u = auxiliary_input(cfg_.gains, r.e1, e1_dot, ref.q_ddot);
    r.tau = nominal_inertia(q) * r.u;
    r.s_norm = report_s_norm(r.e1, e1_dot);
    r.c_hat = state_.c_hat;
    return r;
  }

  StepResult tdc_step(const Measurement& meas, const ReferenceSample& ref, double t) const {
    StepResult r;
    const auto h = static_cast<std::size_t>(cfg_.h_lag);
    const VectorXd& q = lagged(0).q;
    VectorXd qdd_h;
    if (cfg_.velocity_source == VelocitySource::kTrue) {
      if (!meas.q_dot) throw Error(ErrorCode::kInvalidArgument, "TDC needs the true velocity");
      r.q_dot_used = *meas.q_dot;
      if (!cfg_.exact_nominal) {
        if (!meas.q_ddot_h) throw Error(ErrorCode::kInvalidArgument, "TDC needs q''(t - h)");
        qdd_h = *meas.q_ddot_h;
      }
    } else {
      r.q_dot_used = fd_velocity(0);
      qdd_h = fd_acceleration(h);
    }
    r.e1 = q - ref.q;
    const VectorXd e1_dot = r.q_dot_used - ref.q_dot;
    r.u = auxiliary_input(cfg_.gains, r.e1, e1_dot, ref.q_ddot);
    VectorXd n_hat;
    if (cfg_.exact_nominal) {
      n_hat = n_hat_model_(q, r.q_dot_used, t);
    } else {
      const HistorySample& past = lagged(h);
      n_hat = delayed_lumped_estimate(nominal_inertia(past.q), past.tau, qdd_h);
    }
    r.tau = nominal_inertia(q) * r.u + n_hat;
    r.s_norm = report_s_norm(r.e1, e1_dot);
    r.c_hat = state_.c_hat;
    return r;
  }

  StepResult filtered_step(const ReferenceSample& ref, bool switching) {
    StepResult r;
    const auto h = static_cast<std::size_t>(cfg_.h_lag);
    const VectorXd& q = lagged(0).q;
    r.q_dot_used = estimate(state_.buffer, cfg_.velocity_kernel, 0);
    const VectorXd qdd_h = estimate(state_.buffer, cfg_.acceleration_kernel, h);
    r.e1 = q - ref.q;
    const VectorXd e1_dot = r.q_dot_used - ref.q_dot;
    const VectorXd u_hat = auxiliary_input(cfg_.gains, r.e1, e1_dot, ref.q_ddot);
    const HistorySample& past = lagged(h);
    const VectorXd n_hat = delayed_lumped_estimate(nominal_inertia(past.q), past.tau, qdd_h);
    r.c_hat = state_.c_hat;
    r.u = u_hat;
    if (switching) {
      const VectorXd s = sliding_variable(cfg_.P, r.e1, e1_dot);
      r.s_norm = s.norm();
      const bool rising = r.s_norm - past.s_norm > 0.0;
      const double alpha = rising ? cfg_.alpha : cfg_.alpha_decrease.value_or(cfg_.alpha);
      r.u += switching_law(s, state_.c_hat, alpha, cfg_.epsilon);
      state_.c_hat +=
          cfg_.dt * tarc_gain_rate(state_.c_hat, r.s_norm, past.s_norm, cfg_.gamma_floor);
      state_.c_hat = std::max(state_.c_hat, 0.0);
    } else {
      r.s_norm = report_s_norm(r.e1, e1_dot);
    }
    r.tau = nominal_inertia(q) * r.u + n_hat;
    return r;
  }

  StepResult asmc_step(const Measurement& meas, const ReferenceSample& ref, double t) {
    StepResult r;
    const VectorXd& q = lagged(0).q;
    if (cfg_.velocity_source == VelocitySource::kTrue) {
      if (!meas.q_dot) throw Error(ErrorCode::kInvalidArgument, "ASMC needs the true velocity");
      r.q_dot_used = *meas.q_dot;
    } else {
      r.q_dot_used = fd_velocity(0);
    }
    r.e1 = q - ref.q;
    const VectorXd e1_dot = r.q_dot_used - ref.q_dot;
    const VectorXd s_bar = e1_dot + cfg_.asmc.lambda_s * r.e1;
    r.s_norm = s_bar.norm();
    r.c_hat = state_.c_hat;
    VectorXd delta = VectorXd::Zero(s_bar.size());
    if (r.s_norm >= 1e-12) delta = -state_.c_hat * s_bar / r.s_norm;
    r.u = ref.q_ddot - cfg_.asmc.lambda_s * e1_dot;
    r.tau = nominal_inertia(q) * r.u + n_hat_model_(q, r.q_dot_used, t) + delta;
    const double rho = asmc_threshold(cfg_.asmc, state_.c_hat, cfg_.dt);
    state_.c_hat += cfg_.dt * asmc_gain_rate(state_.c_hat, r.s_norm, rho, cfg_.asmc.c_bar,
                                             cfg_.gamma_floor);
    state_.c_hat = std::max(state_.c_hat, 0.0);
    return r;
  }

  ControllerConfig cfg_;
  InertiaMap m_hat_;
  ForceMap n_hat_model_;
  ControllerState state_;
};

}  // namespace tarc
