#pragma once

// Simulated uncertain Euler-Lagrange plants  M(q) q'' + N(q, q', t) = tau.
//
// Each plant carries its true model and the nominal model a controller is
// allowed to use. Parameter uncertainty is drawn once per plant from a seeded
// stream; disturbances are deterministic functions of time.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tarc/error.hpp"
#include "tarc/linalg.hpp"

namespace tarc {

using InertiaMap = std::function<MatrixXd(const VectorXd& q)>;
using ForceMap = std::function<VectorXd(const VectorXd& q, const VectorXd& q_dot, double t)>;

enum class DisturbanceKind { kNone, kStep, kSinusoid, kBandLimited };

struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::kNone;
  std::vector<double> amplitude;  ///< per DOF, N*m (empty means zero)
  double frequency = 1.0;         ///< rad/s for sinusoid, cutoff rad/s for band-limited
  double step_time = 0.0;         ///< seconds
  int components = 8;             ///< band-limited: number of sinusoids
  std::uint64_t seed = 0;
};

/// Time-only disturbance d(t), subsumed into N.
class Disturbance {
 public:
  Disturbance() = default;

  Disturbance(const DisturbanceSpec& spec, int n) : spec_(spec), n_(n) {
    if (!spec_.amplitude.empty() && static_cast<int>(spec_.amplitude.size()) != n) {
      throw Error(ErrorCode::kDimensionMismatch, "disturbance amplitude needs one entry per DOF");
    }
    if (spec_.kind == DisturbanceKind::kBandLimited) {
      std::mt19937_64 rng(spec_.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const auto count = static_cast<std::size_t>(std::max(1, spec_.components));
      for (int i = 0; i < n; ++i) {
        std::vector<Tone> tones(count);
        for (auto& tone : tones) {
          tone.omega = spec_.frequency * (0.05 + 0.95 * unit(rng));
          tone.phase = 2.0 * std::numbers::pi * unit(rng);
        }
        tones_.push_back(std::move(tones));
      }
    }
  }

  VectorXd operator()(double t) const {
    VectorXd d = VectorXd::Zero(n_);
    if (spec_.amplitude.empty()) return d;
    for (int i = 0; i < n_; ++i) {
      const double a = spec_.amplitude[static_cast<std::size_t>(i)];
      switch (spec_.kind) {
        case DisturbanceKind::kNone:
          break;
        case DisturbanceKind::kStep:
          d[i] = t >= spec_.step_time ? a : 0.0;
          break;
        case DisturbanceKind::kSinusoid:
          d[i] = a * std::sin(spec_.frequency * t + 0.5 * i);
          break;
        case DisturbanceKind::kBandLimited: {
          const auto& tones = tones_[static_cast<std::size_t>(i)];
          double sum = 0.0;
          for (const auto& tone : tones) sum += std::sin(tone.omega * t + tone.phase);
          d[i] = a * sum / std::sqrt(static_cast<double>(tones.size()));
          break;
        }
      }
    }
    return d;
  }

 private:
  struct Tone {
    double omega = 0.0;
    double phase = 0.0;
  };
  DisturbanceSpec spec_;
  int n_ = 0;
  std::vector<std::vector<Tone>> tones_;
};

struct PlantModel {
  std::string name;
  int n = 0;
  InertiaMap M_true;
  ForceMap N_true;
  InertiaMap M_hat;
  ForceMap N_hat_model;  ///< nominal N without disturbance; used only by the ASMC baseline
  double noise_std = 0.0;
  std::function<double(const VectorXd& q, const VectorXd& q_dot)> energy;  ///< frictionless energy, when defined
};

/// Link parameters of a planar two-link arm; angles measured from the horizontal.
struct TwoLinkParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double lc1 = 0.5;
  double lc2 = 0.5;
  double I1 = 1.0 / 12.0;
  double I2 = 1.0 / 12.0;
  double g = 9.81;
  double b1 = 0.5;  ///< viscous friction, N*m*s/rad
  double b2 = 0.5;
};

struct UncertaintySpec {
  double scale = 0.0;  ///< each nominal parameter is (1 + delta) times the true one, |delta| <= scale
  std::uint64_t seed = 0;
};

namespace detail {

inline MatrixXd two_link_inertia(const TwoLinkParams& p, const VectorXd& q) {
  const double c2 = std::cos(q[1]);
  MatrixXd M(2, 2);
  M(0, 0) = p.m1 * p.lc1 * p.lc1 + p.I1 +
            p.m2 * (p.l1 * p.l1 + p.lc2 * p.lc2 + 2.0 * p.l1 * p.lc2 * c2) + p.I2;
  M(0, 1) = p.m2 * (p.lc2 * p.lc2 + p.l1 * p.lc2 * c2) + p.I2;
  M(1, 0) = M(0, 1);
  M(1, 1) = p.m2 * p.lc2 * p.lc2 + p.I2;
  return M;
}

inline VectorXd two_link_bias(const TwoLinkParams& p, const VectorXd& q, const VectorXd& qd) {
  const double h = p.m2 * p.l1 * p.lc2 * std::sin(q[1]);
  const double c1 = std::cos(q[0]);
  const double c12 = std::cos(q[0] + q[1]);
  VectorXd N(2);
  N[0] = -h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]) +
         (p.m1 * p.lc1 + p.m2 * p.l1) * p.g * c1 + p.m2 * p.lc2 * p.g * c12 + p.b1 * qd[0];
  N[1] = h * qd[0] * qd[0] + p.m2 * p.lc2 * p.g * c12 + p.b2 * qd[1];
  return N;
}

inline double two_link_energy(const TwoLinkParams& p, const VectorXd& q, const VectorXd& qd) {
  const double kinetic = 0.5 * qd.dot(two_link_inertia(p, q) * qd);
  const double potential = (p.m1 * p.lc1 + p.m2 * p.l1) * p.g * std::sin(q[0]) +
                           p.m2 * p.lc2 * p.g * std::sin(q[0] + q[1]);
  return kinetic + potential;
}

inline std::vector<double> draw_deltas(const UncertaintySpec& u, std::size_t count) {
  std::vector<double> deltas(count, 0.0);
  if (u.scale == 0.0) return deltas;
  std::mt19937_64 rng(u.seed);
  std::uniform_real_distribution<double> dist(-u.scale, u.scale);
  for (auto& d : deltas) d = dist(rng);
  return deltas;
}

inline void check_uncertainty(const UncertaintySpec& u) {
  if (!(u.scale >= 0.0 && u.scale < 1.0)) {
    throw Error(ErrorCode::kNonPhysicalParams, "uncertainty scale must lie in [0, 1)");
  }
}

}  // namespace detail

inline PlantModel two_link_manipulator(const TwoLinkParams& p, const UncertaintySpec& u = {},
                                       const DisturbanceSpec& dist = {}, double noise_std = 0.0) {
  if (!(p.m1 > 0 && p.m2 > 0 && p.l1 > 0 && p.lc1 > 0 && p.lc2 > 0 && p.I1 > 0 && p.I2 > 0 &&
        p.g >= 0 && p.b1 >= 0 && p.b2 >= 0)) {
    throw Error(ErrorCode::kNonPhysicalParams, "two-link masses, lengths and inertias must be positive");
  }
  if (p.lc1 > p.l1) throw Error(ErrorCode::kNonPhysicalParams, "lc1 must not exceed l1");
  detail::check_uncertainty(u);
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise_std must be >= 0");

  const auto deltas = detail::draw_deltas(u, 7);
  TwoLinkParams nom = p;
  nom.m1 *= 1.0 + deltas[0];
  nom.m2 *= 1.0 + deltas[1];
  nom.I1 *= 1.0 + deltas[2];
  nom.I2 *= 1.0 + deltas[3];
  nom.lc2 *= 1.0 + deltas[4];
  nom.b1 *= 1.0 + deltas[5];
  nom.b2 *= 1.0 + deltas[6];

  Disturbance d(dist, 2);
  PlantModel plant;
  plant.name = "two_link";
  plant.n = 2;
  plant.M_true = [p](const VectorXd& q) { return detail::two_link_inertia(p, q); };
  plant.N_true = [p, d](const VectorXd& q, const VectorXd& qd, double t) -> VectorXd {
    return detail::two_link_bias(p, q, qd) + d(t);
  };
  plant.M_hat = [nom](const VectorXd& q) { return detail::two_link_inertia(nom, q); };
  plant.N_hat_model = [nom](const VectorXd& q, const VectorXd& qd, double) -> VectorXd {
    return detail::two_link_bias(nom, q, qd);
  };
  plant.noise_std = noise_std;
  TwoLinkParams frictionless = p;
  frictionless.b1 = frictionless.b2 = 0.0;
  plant.energy = [frictionless](const VectorXd& q, const VectorXd& qd) {
    return detail::two_link_energy(frictionless, q, qd);
  };
  return plant;
}

/// Differential-drive robot at the dynamic level: generalized coordinates
/// (arc length, heading), velocities (v, omega), M = diag(mass, inertia).
struct WmrParams {
  double mass = 20.0;         ///< kg
  double inertia = 1.5;       ///< kg*m^2
  double wheel_radius = 0.1;  ///< m
  double half_track = 0.2;    ///< m, wheel-to-center distance
  double friction_v = 2.0;    ///< N*s/m
  double friction_w = 0.5;    ///< N*m*s/rad
};

inline PlantModel wmr_dynamic(const WmrParams& p, const UncertaintySpec& u = {},
                              const DisturbanceSpec& dist = {}, double noise_std = 0.0) {
  if (!(p.mass > 0 && p.inertia > 0 && p.wheel_radius > 0 && p.half_track > 0 &&
        p.friction_v >= 0 && p.friction_w >= 0)) {
    throw Error(ErrorCode::kNonPhysicalParams, "WMR mass, inertia and wheel geometry must be positive");
  }
  detail::check_uncertainty(u);
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise_std must be >= 0");

  const auto deltas = detail::draw_deltas(u, 4);
  const double mass_hat = p.mass * (1.0 + deltas[0]);
  const double inertia_hat = p.inertia * (1.0 + deltas[1]);
  const double fv_hat = p.friction_v * (1.0 + deltas[2]);
  const double fw_hat = p.friction_w * (1.0 + deltas[3]);

  Disturbance d(dist, 2);
  PlantModel plant;
  plant.name = "wmr";
  plant.n = 2;
  plant.M_true = [p](const VectorXd&) -> MatrixXd {
    return Eigen::Vector2d(p.mass, p.inertia).asDiagonal().toDenseMatrix();
  };
  plant.N_true = [p, d](const VectorXd&, const VectorXd& qd, double t) -> VectorXd {
    return Eigen::Vector2d(p.friction_v * qd[0], p.friction_w * qd[1]) + d(t);
  };
  plant.M_hat = [mass_hat, inertia_hat](const VectorXd&) -> MatrixXd {
    return Eigen::Vector2d(mass_hat, inertia_hat).asDiagonal().toDenseMatrix();
  };
  plant.N_hat_model = [fv_hat, fw_hat](const VectorXd&, const VectorXd& qd, double) -> VectorXd {
    return Eigen::Vector2d(fv_hat * qd[0], fw_hat * qd[1]);
  };
  plant.noise_std = noise_std;
  plant.energy = [p](const VectorXd&, const VectorXd& qd) {
    return 0.5 * (p.mass * qd[0] * qd[0] + p.inertia * qd[1] * qd[1]);
  };
  return plant;
}

/// Planar pose (x, y, theta) of the WMR; reporting only.
struct WmrPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Advances the pose over one step given the heading coordinate and body speed.
inline WmrPose integrate_wmr_pose(WmrPose pose, double heading, double speed, double dt) {
  pose.x += dt * speed * std::cos(heading);
  pose.y += dt * speed * std::sin(heading);
  pose.theta = heading;
  return pose;
}

/// Forward dynamics q'' = M^-1 (tau - N).
inline VectorXd accelerate(const PlantModel& plant, const VectorXd& q, const VectorXd& q_dot,
                           const VectorXd& tau, double t) {
  const MatrixXd M = plant.M_true(q);
  Eigen::LDLT<MatrixXd> ldlt(M);
  const double cond = ldlt.vectorD().maxCoeff() / ldlt.vectorD().minCoeff();
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0) || cond > 1e8) {
    throw Error(ErrorCode::kIllConditionedInertia, "plant inertia is singular or ill-conditioned");
  }
  return ldlt.solve(tau - plant.N_true(q, q_dot, t));
}

/// Position sensor with additive Gaussian noise.
inline VectorXd measure(const PlantModel& plant, const VectorXd& q, std::mt19937_64& rng) {
  if (plant.noise_std == 0.0) return q;
  std::normal_distribution<double> noise(0.0, plant.noise_std);
  VectorXd out = q;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += noise(rng);
  return out;
}

struct ReferenceSample {
  VectorXd q;
  VectorXd q_dot;
  VectorXd q_ddot;
};

/// Desired trajectory with analytic first and second derivatives.
struct ReferenceTrajectory {
  std::function<ReferenceSample(double t)> sample;

  ReferenceSample operator()(double t) const { return sample(t); }

  static ReferenceTrajectory constant(VectorXd q0) {
    return {[q0](double) {
      return ReferenceSample{q0, VectorXd::Zero(q0.size()), VectorXd::Zero(q0.size())};
    }};
  }

  /// q_d(t) = offset + amplitude .* sin(omega t + phase_i), phase_i = i * phase_step.
  static ReferenceTrajectory sinusoid(VectorXd offset, VectorXd amplitude, double omega,
                                      double phase_step = 0.0) {
    if (offset.size() != amplitude.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "reference offset and amplitude sizes differ");
    }
    return {[offset, amplitude, omega, phase_step](double t) {
      const Eigen::Index n = offset.size();
      ReferenceSample r{VectorXd(n), VectorXd(n), VectorXd(n)};
      for (Eigen::Index i = 0; i < n; ++i) {
        const double arg = omega * t + phase_step * static_cast<double>(i);
        r.q[i] = offset[i] + amplitude[i] * std::sin(arg);
        r.q_dot[i] = amplitude[i] * omega * std::cos(arg);
        r.q_ddot[i] = -amplitude[i] * omega * omega * std::sin(arg);
      }
      return r;
    }};
  }

  /// q_d(t) = c0 + c1 t + c2 t^2 per DOF.
  static ReferenceTrajectory quadratic(VectorXd c0, VectorXd c1, VectorXd c2) {
    if (c0.size() != c1.size() || c0.size() != c2.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "reference coefficient sizes differ");
    }
    return {[c0, c1, c2](double t) {
      return ReferenceSample{c0 + c1 * t + c2 * (t * t), c1 + 2.0 * t * c2, 2.0 * c2};
    }};
  }
};

}  // namespace tarc
