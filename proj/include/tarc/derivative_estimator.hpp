#pragma once

// Position-history derivative estimation with a polynomial integral kernel.
//
// For a signal that is a polynomial of degree Lambda on the window
// [t - sigma, t], the j-th derivative at t equals
//
//   q^(j)(t) = integral_{-sigma}^{0} Omega_j(sigma, psi) q(t + psi) dpsi.
//
// The integral is discretized once over the m + 1 uniformly spaced buffer
// samples, so each estimate is a dot product. The samples are joined by the
// piecewise-quadratic interpolant of composite Simpson, and Omega_j is
// integrated against that interpolant exactly (product integration). A
// signal of degree <= 2 is then reproduced to rounding error whatever the
// kernel degree; with a constant kernel the weights are plain Simpson.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tarc/error.hpp"

namespace tarc {

using Eigen::VectorXd;

inline constexpr int kMaxKernelDegree = 8;

namespace detail {

inline double factorial(int k) {
  static constexpr std::array<double, 2 * kMaxKernelDegree + 3> table = [] {
    std::array<double, 2 * kMaxKernelDegree + 3> t{};
    t[0] = 1.0;
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] * static_cast<double>(i);
    return t;
  }();
  return table.at(static_cast<std::size_t>(k));
}

inline void check_kernel_order(int degree, int order) {
  if (degree < 0 || order < 0) {
    throw Error(ErrorCode::kInvalidArgument, "kernel degree and order must be nonnegative");
  }
  if (degree > kMaxKernelDegree) {
    throw Error(ErrorCode::kDegreeTooLarge,
                "kernel degree " + std::to_string(degree) + " exceeds " +
                    std::to_string(kMaxKernelDegree));
  }
  if (order > degree) {
    throw Error(ErrorCode::kOrderExceedsDegree, "derivative order " + std::to_string(order) +
                                                    " exceeds kernel degree " +
                                                    std::to_string(degree));
  }
}

// Kernel evaluation without the window-membership check; used for quadrature
// nodes whose endpoint coordinates may carry one ulp of rounding.
inline double kernel_unchecked(int degree, int order, double window, double psi) {
  const double prefactor = factorial(degree + 1 + order) /
                           (std::pow(window, order + 1) * factorial(order) *
                            factorial(degree - order));
  const double x = -psi / window;
  double sum = 0.0;
  double x_pow = 1.0;
  for (int k = 0; k <= degree; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    const double coeff = sign * factorial(degree + 1 + k) /
                         (static_cast<double>(order + k + 1) * factorial(degree - k) *
                          factorial(k) * factorial(k));
    sum += coeff * x_pow;
    x_pow *= x;
  }
  return prefactor * sum;
}

}  // namespace detail

/// Omega_j(sigma, psi) for a degree-`degree` kernel, psi in [-sigma, 0].
inline double kernel_value(int degree, int order, double window, double psi) {
  detail::check_kernel_order(degree, order);
  if (!(window > 0.0)) throw Error(ErrorCode::kInvalidArgument, "window must be positive");
  if (psi < -window || psi > 0.0) {
    throw Error(ErrorCode::kOutOfWindow, "psi must lie in [-sigma, 0]");
  }
  return detail::kernel_unchecked(degree, order, window, psi);
}

/// Composite Simpson coefficient (without the step/3 factor) for node i of m.
inline double simpson_coefficient(int i, int m) {
  if (i == 0 || i == m) return 1.0;
  return (i % 2 == 1) ? 4.0 : 2.0;
}

struct KernelSpec {
  int degree = 2;        ///< polynomial degree Lambda
  int order = 1;         ///< derivative order j
  double window = 0.0;   ///< sigma, seconds
  int intervals = 20;    ///< m; the window holds m + 1 samples
  std::vector<double> nodes;    ///< psi_i = -sigma + i * sigma / m
  std::vector<double> weights;  ///< integral of Omega_j times the interpolation basis of node i

  std::size_t samples() const { return static_cast<std::size_t>(intervals) + 1; }
};

namespace detail {

// 6-point Gauss-Legendre on [-1, 1]; exact to degree 11, enough for a
// degree-8 kernel times a quadratic basis function.
inline constexpr std::array<double, 6> kGaussNodes = {
    -0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
    0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
inline constexpr std::array<double, 6> kGaussWeights = {
    0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
    0.4679139345726910, 0.3607615730481386, 0.1713244923791704};

}  // namespace detail

inline KernelSpec build_weights(int degree, int order, double window, int intervals) {
  detail::check_kernel_order(degree, order);
  if (!(window > 0.0)) throw Error(ErrorCode::kInvalidArgument, "window must be positive");
  if (intervals < 2) {
    throw Error(ErrorCode::kInvalidArgument, "kernel needs at least two subintervals");
  }
  if (intervals % 2 != 0) {
    throw Error(ErrorCode::kOddSubintervals, "Simpson quadrature needs an even interval count, got " +
                                                 std::to_string(intervals));
  }

  KernelSpec spec;
  spec.degree = degree;
  spec.order = order;
  spec.window = window;
  spec.intervals = intervals;
  spec.nodes.resize(spec.samples());
  spec.weights.assign(spec.samples(), 0.0);
  const double step = window / intervals;
  for (int i = 0; i <= intervals; ++i) {
    spec.nodes[static_cast<std::size_t>(i)] = (i == intervals) ? 0.0 : -window + i * step;
  }
  // Panel [psi_2k, psi_2k+2], local x in [-1, 1], psi = mid + x * step.
  for (int k = 0; k < intervals; k += 2) {
    const double mid = -window + (k + 1) * step;
    for (std::size_t g = 0; g < detail::kGaussNodes.size(); ++g) {
      const double x = detail::kGaussNodes[g];
      const double omega = detail::kernel_unchecked(degree, order, window, mid + x * step);
      const double w = detail::kGaussWeights[g] * step * omega;
      spec.weights[static_cast<std::size_t>(k)] += w * 0.5 * x * (x - 1.0);
      spec.weights[static_cast<std::size_t>(k + 1)] += w * (1.0 - x * x);
      spec.weights[static_cast<std::size_t>(k + 2)] += w * 0.5 * x * (x + 1.0);
    }
  }
  return spec;
}

/// Integral of Omega_j^2 over the window with the kernel's own weights,
/// i.e. Omega_j integrated against the interpolant of its node values.
inline double kernel_square_integral(const KernelSpec& kernel) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kernel.samples(); ++i) {
    sum += kernel.weights[i] *
           detail::kernel_unchecked(kernel.degree, kernel.order, kernel.window, kernel.nodes[i]);
  }
  return sum;
}

struct HistorySample {
  double t = 0.0;
  VectorXd q;
  VectorXd tau;
  VectorXd u;
  double s_norm = 0.0;
};

/// Fixed-capacity ring of uniformly spaced samples. Lag 0 is the newest.
class HistoryBuffer {
 public:
  HistoryBuffer() = default;

  HistoryBuffer(std::size_t capacity, double dt) : ring_(capacity), dt_(dt) {
    if (capacity == 0) throw Error(ErrorCode::kInvalidArgument, "history capacity must be positive");
    if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "history dt must be positive");
  }

  std::size_t capacity() const { return ring_.size(); }
  std::size_t size() const { return count_; }
  double dt() const { return dt_; }
  bool empty() const { return count_ == 0; }

  /// True when samples up to `lag` (inclusive) are stored.
  bool warm_for(std::size_t lag) const { return lag < count_; }

  /// Appends a sample and returns a reference to it so the caller can fill
  /// in fields computed after the push (torque, auxiliary input, ||s||).
  HistorySample& push(HistorySample sample) {
    if (count_ > 0) {
      const double expected = at_lag(0).t + dt_;
      if (std::abs(sample.t - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
        throw Error(ErrorCode::kInvalidArgument,
                    "history timestamps must advance by exactly dt");
      }
    }
    head_ = (head_ + 1) % ring_.size();
    ring_[head_] = std::move(sample);
    if (count_ < ring_.size()) ++count_;
    return ring_[head_];
  }

  const HistorySample& at_lag(std::size_t lag) const {
    if (!warm_for(lag)) {
      throw Error(ErrorCode::kBufferCold, "history holds " + std::to_string(count_) +
                                              " samples, lag " + std::to_string(lag) +
                                              " requested");
    }
    return ring_[(head_ + ring_.size() - lag) % ring_.size()];
  }

  HistorySample& newest() { return ring_[head_]; }

  void clear() {
    count_ = 0;
    head_ = 0;
  }

 private:
  std::vector<HistorySample> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  double dt_ = 1.0;
};

/// Kernel estimate of the `kernel.order`-th derivative of q at the sample
/// `at_lag` steps before the newest one.
inline VectorXd estimate(const HistoryBuffer& buffer, const KernelSpec& kernel,
                         std::size_t at_lag) {
  const double expected_window = kernel.intervals * buffer.dt();
  if (std::abs(kernel.window - expected_window) > 1e-9 * kernel.window) {
    throw Error(ErrorCode::kInvalidArgument,
                "kernel window must equal intervals * dt of the history buffer");
  }
  const auto m = static_cast<std::size_t>(kernel.intervals);
  if (!buffer.warm_for(at_lag + m)) {
    throw Error(ErrorCode::kBufferCold, "derivative estimate needs " +
                                            std::to_string(at_lag + m + 1) + " samples, have " +
                                            std::to_string(buffer.size()));
  }
  VectorXd out = VectorXd::Zero(buffer.at_lag(at_lag).q.size());
  for (std::size_t i = 0; i <= m; ++i) {
    out += kernel.weights[i] * buffer.at_lag(at_lag + (m - i)).q;
  }
  return out;
}

}  // namespace tarc
