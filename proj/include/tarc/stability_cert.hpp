#pragma once

// Delay-dependent stability certificates for time-delayed control.
//
// The closed-loop tracking error e = [e1; de1/dt] of a time-delayed
// controller obeys  de/dt = A1 e + B1 e_h + B sigma.  Two block conditions
// certify uniform ultimate boundedness: Psi > 0 for the velocity-feedback
// form and Theta > 0 for the kernel-filtered (position-only) form. Both are
// built around the Lyapunov solution P of A^T P + P A = -Q, A = A1 + B1.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "tarc/derivative_estimator.hpp"
#include "tarc/error.hpp"
#include "tarc/linalg.hpp"

namespace tarc {

struct GainSet {
  int n = 0;
  MatrixXd K1;  ///< position gain, n x n
  MatrixXd K2;  ///< velocity gain, n x n
  MatrixXd A1;  ///< [0 I; 0 0]
  MatrixXd B1;  ///< [0 0; -K1 -K2]
  MatrixXd A;   ///< A1 + B1, Hurwitz
  MatrixXd B;   ///< [0; I], 2n x n
};

inline GainSet build_error_matrices(const MatrixXd& K1, const MatrixXd& K2) {
  if (K1.rows() != K1.cols() || K2.rows() != K2.cols() || K1.rows() != K2.rows() ||
      K1.rows() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "K1 and K2 must be square and of equal size");
  }
  linalg::require_spd(K1, "K1");
  linalg::require_spd(K2, "K2");

  GainSet g;
  g.n = static_cast<int>(K1.rows());
  const int n = g.n;
  g.K1 = K1;
  g.K2 = K2;
  g.A1 = MatrixXd::Zero(2 * n, 2 * n);
  g.A1.topRightCorner(n, n) = MatrixXd::Identity(n, n);
  g.B1 = MatrixXd::Zero(2 * n, 2 * n);
  g.B1.bottomLeftCorner(n, n) = -K1;
  g.B1.bottomRightCorner(n, n) = -K2;
  g.A = g.A1 + g.B1;
  g.B = MatrixXd::Zero(2 * n, n);
  g.B.bottomRows(n) = MatrixXd::Identity(n, n);
  if (!linalg::is_hurwitz(g.A)) {
    throw Error(ErrorCode::kNonHurwitz, "A = A1 + B1 has an eigenvalue with nonnegative real part");
  }
  return g;
}

/// Solves A^T P + P A = -Q by a Kronecker-form direct solve with one step of
/// iterative refinement. Intended for small systems (dimension <= ~12).
inline MatrixXd solve_lyapunov(const MatrixXd& A, const MatrixXd& Q) {
  if (A.rows() != A.cols() || Q.rows() != Q.cols() || A.rows() != Q.rows() || A.rows() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "A and Q must be square and of equal size");
  }
  linalg::require_spd(Q, "Q");
  if (!linalg::is_hurwitz(A)) {
    throw Error(ErrorCode::kNonHurwitz, "Lyapunov solve needs a Hurwitz matrix");
  }

  const Eigen::Index n = A.rows();
  const Eigen::Index nn = n * n;
  // Column-major vec: vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P).
  MatrixXd op = MatrixXd::Zero(nn, nn);
  for (Eigen::Index j = 0; j < n; ++j) {
    op.block(j * n, j * n, n, n) += A.transpose();
    for (Eigen::Index k = 0; k < n; ++k) {
      op.block(j * n, k * n, n, n).diagonal().array() += A(k, j);
    }
  }

  Eigen::FullPivLU<MatrixXd> lu(op);
  if (!lu.isInvertible() || lu.rcond() < 1e3 * std::numeric_limits<double>::epsilon()) {
    throw Error(ErrorCode::kSingularSystem, "Kronecker Lyapunov operator is numerically singular");
  }

  auto unvec = [n](const VectorXd& v) { return Eigen::Map<const MatrixXd>(v.data(), n, n); };
  const MatrixXd rhs = -Q;
  VectorXd x = lu.solve(Eigen::Map<const VectorXd>(rhs.data(), nn));
  MatrixXd P = unvec(x);
  P = 0.5 * (P + P.transpose());

  const MatrixXd r = rhs - (A.transpose() * P + P * A);
  const VectorXd dx = lu.solve(Eigen::Map<const VectorXd>(r.data(), nn));
  P += unvec(dx);
  P = 0.5 * (P + P.transpose());
  return P;
}

inline double lyapunov_residual(const MatrixXd& A, const MatrixXd& P, const MatrixXd& Q) {
  return (A.transpose() * P + P * A + Q).norm();
}

struct StabilityParams {
  double beta = 1.0;       ///< Young-inequality weight, > 0
  double xi = 2.0;         ///< > 1
  MatrixXd D;              ///< 2n x 2n SPD
  MatrixXd Q;              ///< 2n x 2n SPD
  MatrixXd L;              ///< 2n x 2n SPD, filtered condition only
  double h = 0.0;          ///< delay, seconds
  double sigma_win = 0.0;  ///< estimator window, filtered condition only

  /// beta = 1, xi = 2, D = Q = I, L = 0.1 I.
  static StabilityParams defaults(int n, double h, double sigma_win = 0.0) {
    StabilityParams p;
    p.D = MatrixXd::Identity(2 * n, 2 * n);
    p.Q = MatrixXd::Identity(2 * n, 2 * n);
    p.L = 0.1 * MatrixXd::Identity(2 * n, 2 * n);
    p.h = h;
    p.sigma_win = sigma_win;
    return p;
  }
};

enum class CertificateKind { kTdc, kFtdc };

inline std::string_view to_string(CertificateKind kind) {
  return kind == CertificateKind::kTdc ? "TDC" : "FTDC";
}

struct StabilityCertificate {
  MatrixXd P;
  MatrixXd condition_matrix;  ///< Psi (4n x 4n) or Theta (6n x 6n)
  double lambda_min = 0.0;
  bool feasible = false;
  CertificateKind kind = CertificateKind::kTdc;
  double h = 0.0;
};

namespace detail {

inline void check_common(const GainSet& g, const StabilityParams& p) {
  const Eigen::Index m = 2 * g.n;
  if (p.D.rows() != m || p.D.cols() != m || p.Q.rows() != m || p.Q.cols() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "D and Q must be 2n x 2n");
  }
  if (!(p.beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be positive");
  if (!(p.xi > 1.0)) throw Error(ErrorCode::kInvalidArgument, "xi must exceed 1");
  if (!(p.h >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "h must be nonnegative");
  linalg::require_spd(p.D, "D");
  linalg::require_spd(p.Q, "Q");
}

inline StabilityCertificate finish(MatrixXd P, MatrixXd cond, CertificateKind kind, double h) {
  StabilityCertificate cert;
  cert.P = std::move(P);
  cert.condition_matrix = 0.5 * (cond + cond.transpose());
  cert.lambda_min = linalg::min_eigenvalue(cert.condition_matrix);
  cert.feasible = linalg::positive_definite(cert.lambda_min, cert.condition_matrix);
  cert.kind = kind;
  cert.h = h;
  return cert;
}

}  // namespace detail

/// Psi = blockdiag(Q - E - (1 + xi) h^2/beta D, (xi - 1) h^2/beta D) with
/// E = beta P B1 (A1 D^-1 A1^T + B1 D^-1 B1^T + D^-1) B1^T P.
inline StabilityCertificate assemble_psi(const GainSet& g, const StabilityParams& p) {
  detail::check_common(g, p);
  const MatrixXd P = solve_lyapunov(g.A, p.Q);
  const MatrixXd Dinv = p.D.llt().solve(MatrixXd::Identity(p.D.rows(), p.D.cols()));
  const MatrixXd inner = g.A1 * Dinv * g.A1.transpose() + g.B1 * Dinv * g.B1.transpose() + Dinv;
  const MatrixXd E = p.beta * P * g.B1 * inner * g.B1.transpose() * P;
  const double w = p.h * p.h / p.beta;

  const Eigen::Index m = 2 * g.n;
  MatrixXd psi = MatrixXd::Zero(2 * m, 2 * m);
  psi.topLeftCorner(m, m) = p.Q - E - (1.0 + p.xi) * w * p.D;
  psi.bottomRightCorner(m, m) = (p.xi - 1.0) * w * p.D;
  return detail::finish(P, std::move(psi), CertificateKind::kTdc, p.h);
}

/// Theta, the 3 x 3 block condition for the kernel-filtered controller.
/// The kernel must be the first-derivative kernel used by the controller;
/// its window overrides params.sigma_win when the latter is unset.
inline StabilityCertificate assemble_theta(const GainSet& g, const StabilityParams& p,
                                           const KernelSpec& kernel) {
  detail::check_common(g, p);
  if (kernel.order != 1) {
    throw Error(ErrorCode::kKernelOrderMismatch,
                "filtered condition needs the first-derivative kernel, got order " +
                    std::to_string(kernel.order));
  }
  if (p.sigma_win > 0.0 && std::abs(p.sigma_win - kernel.window) > 1e-12 * kernel.window) {
    throw Error(ErrorCode::kInvalidArgument, "sigma_win does not match the kernel window");
  }
  const Eigen::Index n = g.n;
  const Eigen::Index m = 2 * n;
  if (p.L.rows() != m || p.L.cols() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "L must be 2n x 2n");
  }
  linalg::require_spd(p.L, "L");

  const MatrixXd P = solve_lyapunov(g.A, p.Q);
  const MatrixXd Dinv = p.D.llt().solve(MatrixXd::Identity(m, m));

  MatrixXd gain_pos = MatrixXd::Zero(n, m);  // [K2 0]
  gain_pos.leftCols(n) = g.K2;
  MatrixXd gain_vel = MatrixXd::Zero(n, m);  // [0 K2]
  gain_vel.rightCols(n) = g.K2;
  const MatrixXd b_bar = g.B * gain_pos;
  const MatrixXd b_breve = g.B * gain_vel;

  const MatrixXd inner = g.A1 * Dinv * g.A1.transpose() + g.B1 * Dinv * g.B1.transpose() + Dinv +
                         b_bar * Dinv * b_bar.transpose();
  const MatrixXd E_bar = p.beta * P * g.B1 * inner * g.B1.transpose() * P;
  const double w = p.h * p.h / p.beta;
  const double kernel_energy = kernel.window * kernel_square_integral(kernel);
  const MatrixXd F_bar = (w * p.D + p.L) * kernel_energy;

  MatrixXd theta = MatrixXd::Zero(3 * m, 3 * m);
  theta.block(0, 0, m, m) = p.Q - E_bar - (1.0 + p.xi) * w * p.D;
  theta.block(0, m, m, m) = P * b_breve;
  theta.block(0, 2 * m, m, m) = P * b_bar;
  theta.block(m, 0, m, m) = b_breve.transpose() * P;
  theta.block(m, m, m, m) = (p.xi - 1.0) * w * p.D - F_bar;
  theta.block(2 * m, 0, m, m) = b_bar.transpose() * P;
  theta.block(2 * m, 2 * m, m, m) = p.L;
  return detail::finish(P, std::move(theta), CertificateKind::kFtdc, p.h);
}

inline StabilityCertificate assemble(const GainSet& g, const StabilityParams& p,
                                     CertificateKind kind, const KernelSpec* kernel) {
  if (kind == CertificateKind::kTdc) return assemble_psi(g, p);
  if (kernel == nullptr) {
    throw Error(ErrorCode::kInvalidArgument, "filtered certificate needs a kernel");
  }
  return assemble_theta(g, p, *kernel);
}

struct DelayBracket {
  double h_lo = 0.0;                ///< must be feasible
  std::optional<double> h_hi;       ///< must be infeasible when supplied
  double h_cap = 100.0;             ///< doubling probe gives up above this
  double rel_width = 1e-6;
};

struct DelaySearchResult {
  double h_star = 0.0;
  double bracket_lo = 0.0;  ///< initial feasible endpoint
  double bracket_hi = 0.0;  ///< initial infeasible endpoint
  bool feasible_below = false;  ///< verdict at h_star * (1 - rel_width)
  bool feasible_above = false;  ///< verdict at h_star * (1 + rel_width)
  int evaluations = 0;
};

/// Largest delay at which the selected condition still holds, by bisection
/// on a verified [feasible, infeasible] bracket. Only the endpoint verdicts
/// are checked; monotonicity in h is not assumed.
inline DelaySearchResult max_feasible_delay(const GainSet& g, const StabilityParams& params,
                                            CertificateKind kind, const KernelSpec* kernel,
                                            const DelayBracket& bracket) {
  if (!(bracket.h_lo > 0.0)) throw Error(ErrorCode::kInvalidArgument, "h_lo must be positive");
  DelaySearchResult out;
  auto feasible_at = [&](double h) {
    StabilityParams p = params;
    p.h = h;
    ++out.evaluations;
    return assemble(g, p, kind, kernel).feasible;
  };

  double lo = bracket.h_lo;
  if (!feasible_at(lo)) {
    throw Error(ErrorCode::kNoFeasiblePoint,
                "condition already fails at h_lo = " + std::to_string(lo));
  }
  double hi = 0.0;
  if (bracket.h_hi) {
    hi = *bracket.h_hi;
    if (!(hi > lo) || feasible_at(hi)) {
      throw Error(ErrorCode::kBracketNotFound, "supplied h_hi is not an infeasible upper bracket");
    }
  } else {
    hi = 2.0 * lo;
    while (feasible_at(hi)) {
      lo = hi;
      hi *= 2.0;
      if (hi > bracket.h_cap) {
        throw Error(ErrorCode::kBracketNotFound,
                    "condition still holds at the probe cap " + std::to_string(bracket.h_cap));
      }
    }
  }
  out.bracket_lo = lo;
  out.bracket_hi = hi;

  while (hi - lo > 0.5 * bracket.rel_width * lo) {
    const double mid = 0.5 * (lo + hi);
    if (feasible_at(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.h_star = lo;
  out.feasible_below = feasible_at(lo * (1.0 - bracket.rel_width));
  out.feasible_above = feasible_at(lo * (1.0 + bracket.rel_width));
  return out;
}

enum class UubCase { kTdc, kTarcI, kTarcII, kTarcIII };

/// Scalars entering the ultimate bounds. The iota constants are existence
/// constants without a constructive definition; callers supply estimates.
struct UubDiagnostics {
  double gamma1 = 0.0;       ///< TDC: iota * ||sigma1|| / lambda_min(Psi)
  double Gamma = 0.0;        ///< Gamma_1 (TDC) or Gamma (TARC)
  double iota = 0.0;
  double iota2 = 0.0;
  double iota3 = 0.0;
  double alpha = 2.0;
  double c_hat = 0.0;
  double c_bound = 0.0;      ///< c, with ||sigma1|| <= c
  double upsilon = 0.0;      ///< ||Delta u_h - Delta u||
  double gamma_floor = 0.0;
  std::optional<double> c0;            ///< decay rate bound for the reaching-time estimate
  std::optional<double> initial_error; ///< ||e_bar(t0)||
};

struct UubReport {
  double bound = 0.0;  ///< varpi_0 .. varpi_3
  double mu = 0.0;     ///< gamma1 or mu_1 .. mu_3
  std::optional<double> reaching_time;
};

inline double tdc_gamma1(double iota, double sigma1_norm, double lambda_min) {
  return iota * sigma1_norm / lambda_min;
}

inline UubReport compute_uub(const UubDiagnostics& d, const StabilityCertificate& cert,
                             UubCase which) {
  if (!(cert.lambda_min > 0.0) || !cert.feasible) {
    throw Error(ErrorCode::kInfeasibleCertificate, "ultimate bound needs lambda_min > 0");
  }
  for (double v : {d.gamma1, d.Gamma, d.iota, d.iota2, d.iota3, d.alpha, d.c_hat, d.c_bound,
                   d.upsilon, d.gamma_floor}) {
    if (!(v >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "diagnostic scalars must be >= 0");
  }
  const double lam = cert.lambda_min;
  const double robust = d.iota3 * (d.alpha * d.c_hat + d.c_bound + d.upsilon);
  double mu = 0.0;
  double gamma_total = d.Gamma;
  switch (which) {
    case UubCase::kTdc:
      mu = d.gamma1;
      break;
    case UubCase::kTarcI:
      mu = (d.iota2 * d.upsilon + robust) / lam;
      break;
    case UubCase::kTarcII:
      mu = (d.iota2 * (2.0 * d.c_bound - (d.alpha + 1.0) * d.c_hat + d.upsilon) + robust) / lam;
      break;
    case UubCase::kTarcIII:
      mu = (d.iota2 * (d.c_bound - d.alpha * d.c_hat + d.upsilon) + robust) / lam;
      gamma_total += 2.0 * d.gamma_floor * d.gamma_floor;
      break;
  }
  UubReport r;
  r.mu = mu;
  r.bound = mu + std::sqrt(gamma_total / lam + mu * mu);
  if (d.c0 && d.initial_error) {
    if (!(*d.c0 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "c0 must be positive");
    r.reaching_time = std::max(0.0, (*d.initial_error - r.bound) / *d.c0);
  }
  return r;
}

}  // namespace tarc
