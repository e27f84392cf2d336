// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "entroflow/bounds.hpp"

namespace entroflow {

/// Shortest round-trippable decimal rendering of a double (17 significant
/// digits); NaN prints as "nan" and marks a non-applicable cell.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void push_numeric(const std::vector<double>& values) {
    std::vector<std::string> row;
    row.reserve(values.size());
    for (const double v : values) row.push_back(fmt17(v));
    rows.push_back(std::move(row));
  }
};

inline std::string csv_to_string(const CsvTable& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw std::invalid_argument("CSV row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

inline void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << csv_to_string(table);
  if (!f) throw std::runtime_error("write failed: " + path);
}

/// Fills the central-path diagnostic of a Kakade-flow trajectory: the Kakade
/// divergence from each sampled flow policy to the regularized optimum at
/// tau = 1/t (zero at t = 0, where both sit at pi0).
inline void annotate_central_path(const MdpInstance& m, const Matrix& pi0, FlowTrajectory& traj,
                                  double solver_tol = -1.0) {
  traj.dk_to_central_path.resize(traj.times.size());
  for (Eigen::Index i = 0; i < traj.times.size(); ++i) {
    const double t = traj.times[i];
    if (t <= 0.0) {
      traj.dk_to_central_path[i] = 0.0;
      continue;
    }
    const RegularizedSolution sol = solve_entropy_regularized(m, pi0, 1.0 / t, solver_tol);
    traj.dk_to_central_path[i] =
        kakade_divergence(m, sol.pi_star_tau, traj.policies[static_cast<std::size_t>(i)]);
  }
}

/// Trajectory table with the contractual columns.  The trajectory must be
/// certified first (gap columns filled); exponential-bound columns are NaN
/// outside their domain of validity and for non-entropy flows.
inline CsvTable flow_csv_table(const MdpInstance& m, const BoundContext& ctx,
                               const FlowTrajectory& traj, bool entropy_bounds) {
  if (traj.reward_gap.size() != traj.times.size())
    throw std::invalid_argument("trajectory gaps not filled; certify it first");
  CsvTable table;
  table.header = {"t",
                  "reward",
                  "reward_gap",
                  "dk_to_pistar",
                  "dk_to_central_path",
                  "upper_bound_thm42",
                  "lower_bound_thm42",
                  "upper_bound_thm44",
                  "lower_bound_thm44"};
  const bool have_central = traj.dk_to_central_path.size() == traj.times.size();
  for (Eigen::Index i = 0; i < traj.times.size(); ++i) {
    const double t = traj.times[i];
    BoundPair v42, p44;
    if (entropy_bounds && t >= 1.0 && std::isfinite(ctx.consts.delta)) {
      const double offmass =
          min_state_offmass(m, ctx.opt, traj.policies[static_cast<std::size_t>(i)], ctx.pi0);
      v42 = thm42_bounds(ctx.consts, t, offmass);
      p44 = thm44_bounds(ctx.consts, t);
    }
    table.push_numeric({t, traj.rewards[i], traj.reward_gap[i], traj.dk_to_pistar[i],
                        have_central ? traj.dk_to_central_path[i] : quiet_nan, v42.upper,
                        v42.lower, p44.upper, p44.lower});
  }
  return table;
}

/// Iteration table for NPG runs with the contractual columns.  Row k holds
/// iterate k; step diagnostics (min_Z, progress) for the step producing
/// iterate k sit in row k and are NaN in row 0.  For unregularized runs the
/// bound columns carry the exponential value sandwich; for regularized runs
/// the upper bound is the overall error bound (NaN before it applies) and
/// the distance columns carry the regularized diagnostics.
inline CsvTable npg_csv_table(const MdpInstance& m, BoundContext& ctx, const NpgRun& run) {
  CsvTable table;
  table.header = {"k",          "reward",      "reward_gap", "log_gap",
                  "min_Z",      "q_dist_tau",  "logpi_dist_tau",
                  "bound_upper", "bound_lower", "progress_lhs", "progress_rhs"};
  const bool regularized = run.tau > 0.0;
  if (regularized) {
    const RegularizedSolution star = solve_entropy_regularized(m, uniform_policy(m), run.tau);
    ctx.consts.c_cen =
        regularized_run_constant(m, star, run.iterates.front(), run.eta, run.tau);
  }
  for (std::size_t k = 0; k < run.iterates.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double gap = optimality_gap(m, ctx.opt, run.iterates[k]);
    const double log_gap = gap > 0.0 ? std::log(gap) : quiet_nan;
    double min_z = quiet_nan, lhs = quiet_nan, rhs = quiet_nan;
    if (k >= 1 && run.min_z.size() >= static_cast<Eigen::Index>(k)) {
      min_z = run.min_z[static_cast<Eigen::Index>(k) - 1];
      lhs = run.progress_lhs[static_cast<Eigen::Index>(k) - 1];
      rhs = run.progress_rhs[static_cast<Eigen::Index>(k) - 1];
    }
    double q_dist = quiet_nan, logpi_dist = quiet_nan;
    if (run.q_dist_tau.size() == static_cast<Eigen::Index>(run.iterates.size())) {
      q_dist = run.q_dist_tau[static_cast<Eigen::Index>(k)];
      logpi_dist = run.logpi_dist_tau[static_cast<Eigen::Index>(k)];
    }
    BoundPair bounds;
    if (std::isfinite(ctx.consts.delta) && k >= 1) {
      if (!regularized) {
        const double offmass = min_state_offmass(m, ctx.opt, run.iterates[k], ctx.pi0);
        bounds = thm47_bounds(ctx.consts, static_cast<int>(k), run.eta, offmass);
      } else if (k >= 2) {
        bounds.upper = thm61_overall(ctx.consts, m.n_states, static_cast<int>(k) - 1, run.eta,
                                     run.tau);
      }
    }
    table.push_numeric({kk, run.rewards[static_cast<Eigen::Index>(k)], gap, log_gap, min_z,
                        q_dist, logpi_dist, bounds.upper, bounds.lower, lhs, rhs});
  }
  return table;
}

namespace detail {
inline nlohmann::json json_num(double x) {
  if (!std::isfinite(x)) return nullptr;  // JSON has no NaN/inf; null = not applicable
  return x;
}
}  // namespace detail

inline nlohmann::json bound_constants_json(const BoundConstants& c) {
  nlohmann::json j;
  j["gamma"] = c.gamma;
  j["r_inf"] = c.r_inf;
  j["delta"] = detail::json_num(c.delta);
  j["dk_star_pi0"] = c.dk_star_pi0;
  j["c_flow"] = c.c_flow;
  j["eta"] = c.eta;
  j["c_npg"] = c.c_npg;
  j["c_unif"] = c.c_unif;
  j["min_dstar"] = c.min_dstar;
  j["min_dstar_off"] = c.min_dstar_off;
  j["c_cen"] = detail::json_num(c.c_cen);
  return j;
}

inline nlohmann::json bound_report_json(const BoundReport& report) {
  nlohmann::json j;
  j["constants"] = bound_constants_json(report.constants);
  j["rows"] = nlohmann::json::array();
  for (const BoundRow& row : report.rows) {
    nlohmann::json r;
    r["label"] = row.label;
    r["x"] = row.x;
    r["quantity"] = detail::json_num(row.quantity);
    r["upper"] = detail::json_num(row.upper);
    r["lower"] = detail::json_num(row.lower);
    r["pass"] = row.pass;
    j["rows"].push_back(std::move(r));
  }
  j["fitted_exponent"] = detail::json_num(report.fitted_exponent);
  j["fitted_r2"] = detail::json_num(report.fitted_r2);
  j["verdict"] = report.pass ? "pass" : "fail";
  return j;
}

inline CsvTable bound_report_table(const BoundReport& report) {
  CsvTable table;
  table.header = {"label", "x", "quantity", "upper", "lower", "pass"};
  for (const BoundRow& row : report.rows)
    table.rows.push_back({row.label, fmt17(row.x), fmt17(row.quantity), fmt17(row.upper),
                          fmt17(row.lower), row.pass ? "1" : "0"});
  return table;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace entroflow
