#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace tarc::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = g(rng);
  }
  return m;
}

inline VectorXd random_vector(std::mt19937_64& rng, int n) { return random_matrix(rng, n, 1); }

/// G G^T + shift I, well away from singular.
inline MatrixXd random_spd(std::mt19937_64& rng, int n, double shift = 0.1) {
  const MatrixXd g = random_matrix(rng, n, n);
  return g * g.transpose() + shift * MatrixXd::Identity(n, n);
}

/// Random matrix shifted left until every eigenvalue has real part <= -margin.
inline MatrixXd random_hurwitz(std::mt19937_64& rng, int n, double margin = 0.1) {
  MatrixXd a = random_matrix(rng, n, n);
  const double abscissa = a.eigenvalues().real().maxCoeff();
  std::uniform_real_distribution<double> extra(0.0, 1.0);
  return a - (abscissa + margin + extra(rng)) * MatrixXd::Identity(n, n);
}

/// Solves A^T P + P A = -Q through the vectorized system
/// (I kron A^T + A^T kron I) vec(P) = -vec(Q) with a QR factorization.
inline MatrixXd kronecker_lyapunov(const MatrixXd& a, const MatrixXd& q) {
  const Eigen::Index n = a.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  MatrixXd op = MatrixXd::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      op.block(i * n, j * n, n, n) += id(i, j) * a.transpose();
      op.block(i * n, j * n, n, n) += a(j, i) * id;
    }
  }
  const VectorXd rhs = -Eigen::Map<const VectorXd>(q.data(), n * n);
  const VectorXd x = op.colPivHouseholderQr().solve(rhs);
  return Eigen::Map<const MatrixXd>(x.data(), n, n);
}

// Inequality checks: each returns lhs - rhs of an inequality expected to be
// >= 0, together with a scale for the rounding tolerance.
struct Margin {
  double value = 0.0;
  double scale = 1.0;
  bool holds(double rel = 1e-12) const { return value >= -rel * scale; }
};

/// +/- 2 z1' z2 <= beta z1' D^-1 z1 + (1/beta) z2' D z2, worst sign.
inline Margin young_trial(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> logb(-3.0, 3.0);
  const double beta = std::pow(10.0, logb(rng));
  const MatrixXd d = random_spd(rng, n);
  const VectorXd z1 = random_vector(rng, n);
  const VectorXd z2 = random_vector(rng, n);
  const double rhs = beta * z1.dot(d.ldlt().solve(z1)) + z2.dot(d * z2) / beta;
  const double lhs = 2.0 * std::abs(z1.dot(z2));
  return {rhs - lhs, rhs + lhs};
}

/// Trapezoid weights on k + 1 nodes over an interval of length `width`.
inline std::vector<double> trapezoid(int k, double width) {
  std::vector<double> w(static_cast<std::size_t>(k) + 1, width / k);
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

/// Discrete form of  int e'De >= (1/h) (int e)' D (int e)  for a random
/// piecewise-constant e sampled on a trapezoid grid over [-h, 0].
inline Margin jensen_trial(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> pieces(1, 12);
  std::uniform_int_distribution<int> nodes(8, 64);
  std::uniform_real_distribution<double> width(1e-3, 2.0);
  const double h = width(rng);
  const int k = nodes(rng);
  const int p = pieces(rng);
  const MatrixXd d = random_spd(rng, n);
  std::vector<VectorXd> levels;
  for (int i = 0; i < p; ++i) levels.push_back(random_vector(rng, n));
  const auto w = trapezoid(k, h);
  double quad = 0.0;
  VectorXd integral = VectorXd::Zero(n);
  for (int i = 0; i <= k; ++i) {
    const VectorXd& e = levels[static_cast<std::size_t>(std::min(p - 1, i * p / (k + 1)))];
    quad += w[static_cast<std::size_t>(i)] * e.dot(d * e);
    integral += w[static_cast<std::size_t>(i)] * e;
  }
  const double rhs = integral.dot(d * integral) / h;
  return {quad - rhs, quad + rhs};
}

/// Discrete form of the double-integral bound over [-h, 0] x [-sigma, 0]:
///   sum w_ij v_ij' F v_ij >= (1/(h sigma)) (sum w_ij v_ij)' F (sum w_ij v_ij).
inline Margin double_jensen_trial(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> nodes(4, 24);
  std::uniform_real_distribution<double> width(1e-3, 2.0);
  const double h = width(rng);
  const double sigma = width(rng);
  const int kh = nodes(rng);
  const int ks = nodes(rng);
  const MatrixXd f = random_spd(rng, n);
  const auto wh = trapezoid(kh, h);
  const auto ws = trapezoid(ks, sigma);
  double quad = 0.0;
  VectorXd integral = VectorXd::Zero(n);
  for (int i = 0; i <= kh; ++i) {
    for (int j = 0; j <= ks; ++j) {
      const VectorXd v = random_vector(rng, n);
      const double w = wh[static_cast<std::size_t>(i)] * ws[static_cast<std::size_t>(j)];
      quad += w * v.dot(f * v);
      integral += w * v;
    }
  }
  const double rhs = integral.dot(f * integral) / (h * sigma);
  return {quad - rhs, quad + rhs};
}

}  // namespace tarc::testing
