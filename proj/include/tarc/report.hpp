#pragma once

// CSV emission and reading. Floats are printed with %.17g so every value
// survives a write/read cycle bit-for-bit.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tarc/error.hpp"
#include "tarc/simulator.hpp"
#include "tarc/stability_cert.hpp"

namespace tarc {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Column layout: t, q_1..n, qd_1..n, qdot_1..n, e1_1..n, tau_1..n, c_hat, s_norm.
/// qd is the reference position, qdot the true velocity.
inline std::vector<std::string> trace_header(int n) {
  std::vector<std::string> cols{"t"};
  for (const char* group : {"q", "qd", "qdot", "e1", "tau"}) {
    for (int i = 1; i <= n; ++i) cols.push_back(std::string(group) + "_" + std::to_string(i));
  }
  cols.emplace_back("c_hat");
  cols.emplace_back("s_norm");
  return cols;
}

inline void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  const auto header = trace_header(trace.n);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t r = 0; r < trace.size(); ++r) {
    out << fmt17(trace.t[r]);
    for (const auto* group : {&trace.q, &trace.q_ref, &trace.q_dot, &trace.e1, &trace.tau}) {
      const VectorXd& v = (*group)[r];
      for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << fmt17(v[i]);
    }
    out << ',' << fmt17(trace.c_hat[r]) << ',' << fmt17(trace.s_norm[r]) << '\n';
  }
}

/// Rebuilds the recorded columns of a trace; run flags are not stored in
/// the CSV, so `warmup_time` and `label` are left for the caller.
inline SimTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyTrace, "trace CSV has no header");
  const auto columns = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 8 || (columns - 3) % 5 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "trace CSV header has " + std::to_string(columns) +
                                                 " columns, expected 1 + 5n + 2");
  }
  SimTrace trace;
  trace.n = (columns - 3) / 5;
  const int n = trace.n;
  std::vector<double> row(static_cast<std::size_t>(columns));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    int c = 0;
    while (std::getline(cells, cell, ',')) {
      if (c >= columns) break;
      row[static_cast<std::size_t>(c++)] = std::strtod(cell.c_str(), nullptr);
    }
    if (c != columns) throw Error(ErrorCode::kInvalidArgument, "short row in trace CSV");
    auto block = [&](int group) {
      VectorXd v(n);
      for (int i = 0; i < n; ++i) v[i] = row[static_cast<std::size_t>(1 + group * n + i)];
      return v;
    };
    trace.t.push_back(row[0]);
    trace.q.push_back(block(0));
    trace.q_ref.push_back(block(1));
    trace.q_dot.push_back(block(2));
    trace.e1.push_back(block(3));
    trace.tau.push_back(block(4));
    trace.c_hat.push_back(row[static_cast<std::size_t>(1 + 5 * n)]);
    trace.s_norm.push_back(row[static_cast<std::size_t>(2 + 5 * n)]);
  }
  if (trace.size() > 1) trace.dt = trace.t[1] - trace.t[0];
  return trace;
}

inline const char* metrics_header() {
  return "label,rms_e1,max_e1,control_energy,chattering_index,c_hat_final,c_hat_max,"
         "settle_time,diverged,diverged_step,tau_jump,config_hash";
}

inline void write_metrics_row(std::ostream& out, const Metrics& m, const SimTrace& trace,
                              const std::string& hash) {
  out << m.label << ',' << fmt17(m.rms_e1) << ',' << fmt17(m.max_e1) << ','
      << fmt17(m.control_energy) << ',' << fmt17(m.chattering_index) << ','
      << fmt17(m.c_hat_final) << ',' << fmt17(m.c_hat_max) << ',' << fmt17(m.settle_time) << ','
      << (m.diverged ? 1 : 0) << ',' << trace.diverged_step << ',' << fmt17(trace.tau_jump) << ','
      << hash << '\n';
}

/// Flattened certificate: kind, h, lambda_min, feasible, eigenvalues of P, hash.
inline void write_certificate_record(std::ostream& out, const StabilityCertificate& cert,
                                     const std::string& hash, bool header) {
  const VectorXd eig = linalg::symmetric_eigenvalues(cert.P);
  if (header) {
    out << "kind,h,lambda_min,feasible";
    for (Eigen::Index i = 1; i <= eig.size(); ++i) out << ",p_eig_" << i;
    out << ",config_hash\n";
  }
  out << to_string(cert.kind) << ',' << fmt17(cert.h) << ',' << fmt17(cert.lambda_min) << ','
      << (cert.feasible ? 1 : 0);
  for (Eigen::Index i = 0; i < eig.size(); ++i) out << ',' << fmt17(eig[i]);
  out << ',' << hash << '\n';
}

}  // namespace tarc
