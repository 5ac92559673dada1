#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tarc/error.hpp"

namespace tarc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace linalg {

inline double symmetry_defect(const MatrixXd& m) { return (m - m.transpose()).norm(); }

inline bool is_symmetric(const MatrixXd& m, double rel_tol = 1e-12) {
  return m.rows() == m.cols() && symmetry_defect(m) <= rel_tol * std::max(1.0, m.norm());
}

/// Smallest eigenvalue of the symmetric part of `m`.
inline double min_eigenvalue(const MatrixXd& m) {
  const MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline VectorXd symmetric_eigenvalues(const MatrixXd& m) {
  const MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Strict positivity with a floating-point guard scaled by the matrix norm.
inline bool positive_definite(double lambda_min, const MatrixXd& m) {
  return lambda_min > 1e-12 * std::max(m.norm(), 1e-300);
}

inline bool is_spd(const MatrixXd& m) {
  if (m.rows() == 0 || !is_symmetric(m)) return false;
  return positive_definite(min_eigenvalue(m), m);
}

inline void require_spd(const MatrixXd& m, const std::string& name) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, name + " must be square");
  }
  if (!is_spd(m)) {
    throw Error(ErrorCode::kNotSpd, name + " must be symmetric positive definite");
  }
}

/// Largest real part over the spectrum of a general square matrix.
inline double spectral_abscissa(const MatrixXd& a) {
  Eigen::EigenSolver<MatrixXd> es(a, false);
  return es.eigenvalues().real().maxCoeff();
}

inline bool is_hurwitz(const MatrixXd& a) { return spectral_abscissa(a) < 0.0; }

/// 2-norm condition number of an SPD matrix (ratio of extreme eigenvalues).
inline double spd_condition(const MatrixXd& m) {
  const VectorXd ev = symmetric_eigenvalues(m);
  const double lo = ev.minCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return ev.maxCoeff() / lo;
}

}  // namespace linalg
}  // namespace tarc
