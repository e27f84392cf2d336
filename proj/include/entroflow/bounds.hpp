// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "entroflow/divergence.hpp"
#include "entroflow/evaluate.hpp"
#include "entroflow/flow.hpp"
#include "entroflow/mdp.hpp"
#include "entroflow/npg.hpp"
#include "entroflow/sigma.hpp"
#include "entroflow/soft_solver.hpp"

namespace entroflow {

inline constexpr double quiet_nan = std::numeric_limits<double>::quiet_NaN();

/// Problem constants entering the exponential convergence certificates.
struct BoundConstants {
  double gamma = 0.0;
  double r_inf = 0.0;        ///< sup norm of the reward
  double delta = 0.0;        ///< minimal (1-gamma)-normalized suboptimality of A*; +inf if none
  double dk_star_pi0 = 0.0;  ///< D_K(pi*, pi0)
  double c_flow = 0.0;       ///< (1-gamma)^{-1} D_K(pi*, pi0)
  double eta = 0.0;          ///< NPG stepsize the NPG constants were built for (0 if unused)
  double c_npg = 0.0;        ///< (D_K(pi*, pi0) + 2 (1-gamma)^{-1} eta r_inf)/(1-gamma)
  double c_unif = 0.0;       ///< D_K of the uniform-reference optimal projection to uniform
  double min_dstar = 0.0;    ///< min_s d^{pi*}(s)
  double min_dstar_off = 0.0;  ///< min over suboptimal (s,a) of d^{pi*}(s) pi0(a|s)
  double c_cen = quiet_nan;  ///< per-run constant of the regularized-NPG contraction
};

/// Everything the certificates need besides scalar constants.
struct BoundContext {
  BoundConstants consts;
  OptimalStructure opt;
  Matrix pi_star;  ///< divergence projection of pi0 onto the optimal set
  Matrix pi0;
  Vector v_star;
  Vector d_star;
};

inline BoundContext make_bound_context(const MdpInstance& m, const Matrix& pi0,
                                       double eta = 0.0) {
  BoundContext ctx;
  ctx.opt = optimal_structure(m);
  ctx.pi0 = pi0;
  ctx.pi_star = max_entropy_optimal_policy(m, pi0);
  ctx.v_star = evaluate_policy(m, ctx.pi_star).v;
  ctx.d_star = state_occupancy(m, ctx.pi_star);

  BoundConstants& c = ctx.consts;
  c.gamma = m.gamma;
  c.r_inf = m.reward_sup();
  c.delta = ctx.opt.delta ? *ctx.opt.delta : std::numeric_limits<double>::infinity();
  c.dk_star_pi0 = kakade_divergence(m, ctx.pi_star, pi0);
  c.c_flow = c.dk_star_pi0 / (1.0 - m.gamma);
  c.eta = eta;
  c.c_npg = (c.dk_star_pi0 + 2.0 / (1.0 - m.gamma) * eta * c.r_inf) / (1.0 - m.gamma);

  const Matrix unif = uniform_policy(m);
  const Matrix star_unif = kakade_projection(m, unif, ctx.opt.optimal_actions);
  c.c_unif = kakade_divergence(m, star_unif, unif);

  c.min_dstar = ctx.d_star.minCoeff();
  c.min_dstar_off = std::numeric_limits<double>::infinity();
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      if (!ctx.opt.is_optimal(s, a))
        c.min_dstar_off = std::min(c.min_dstar_off, ctx.d_star[s] * pi0(s, a));
  if (!std::isfinite(c.min_dstar_off)) c.min_dstar_off = 0.0;  // every action optimal
  return ctx;
}

/// min_s d^{pi}(s) sum_{a not optimal in s} pi0(a|s): the trajectory-dependent
/// coefficient of the value lower bounds.
inline double min_state_offmass(const MdpInstance& m, const OptimalStructure& opt,
                                const Matrix& pi, const Matrix& pi0) {
  const Vector d = state_occupancy(m, pi);
  double out = std::numeric_limits<double>::infinity();
  for (int s = 0; s < m.n_states; ++s) {
    double off = 0.0;
    for (int a = 0; a < m.n_actions; ++a)
      if (!opt.is_optimal(s, a)) off += pi0(s, a);
    out = std::min(out, d[s] * off);
  }
  return std::isfinite(out) ? out : 0.0;
}

/// A bound pair; a NaN side means "not applicable" (vacuous for these inputs).
struct BoundPair {
  double upper = quiet_nan;
  double lower = quiet_nan;
};

namespace detail {
inline void require_finite_delta(const BoundConstants& c) {
  if (!std::isfinite(c.delta))
    throw std::invalid_argument("bound needs a finite suboptimality gap (some suboptimal action)");
}
}  // namespace detail

/// Exponential sandwich for the value gap R* - R(pi_t) of the Kakade flow,
/// with c = c_flow:
///   upper = 2 r_inf (1-gamma)^{-1} exp(-delta (t-1) + c log t),
///   lower = delta * offmass * exp(-delta (t-1) - gamma c log t - 2 r_inf),
/// where offmass is min_state_offmass at pi_t.  Valid for t >= 1.
inline BoundPair thm42_bounds(const BoundConstants& c, double t, double d_pi_t_min_offmass) {
  detail::require_finite_delta(c);
  if (!(t >= 1.0)) throw std::invalid_argument("value-gap sandwich needs t >= 1");
  BoundPair out;
  out.upper = 2.0 * c.r_inf / (1.0 - c.gamma) *
              std::exp(-c.delta * (t - 1.0) + c.c_flow * std::log(t));
  out.lower = c.delta * d_pi_t_min_offmass *
              std::exp(-c.delta * (t - 1.0) - c.gamma * c.c_flow * std::log(t) - 2.0 * c.r_inf);
  return out;
}

/// Exponential sandwich for the policy error D_K(pi*, pi_t) of the flow:
///   upper = x/(1-x) with x = exp(-delta (t-1) + c log t), applicable iff x < 1,
///   lower = min_dstar_off * exp(-delta (t-1) - gamma c log t - 2 r_inf).
inline BoundPair thm44_bounds(const BoundConstants& c, double t) {
  detail::require_finite_delta(c);
  if (!(t >= 1.0)) throw std::invalid_argument("policy-error sandwich needs t >= 1");
  BoundPair out;
  const double x = std::exp(-c.delta * (t - 1.0) + c.c_flow * std::log(t));
  if (x < 1.0) out.upper = x / (1.0 - x);
  out.lower = c.min_dstar_off *
              std::exp(-c.delta * (t - 1.0) - c.gamma * c.c_flow * std::log(t) - 2.0 * c.r_inf);
  return out;
}

/// Exponential sandwich for the value gap of unregularized NPG at iterate k,
/// with c = c_npg built for the run's stepsize:
///   upper = 2 r_inf (1-gamma)^{-1} exp(-delta eta (k-1) + c log k + c),
///   lower = delta * offmass * exp(-delta eta (k-1) - c log k - c
///                                 - 4 eta r_inf/(1-gamma)).
inline BoundPair thm47_bounds(const BoundConstants& c, int k, double eta,
                              double d_pi_k_min_offmass) {
  detail::require_finite_delta(c);
  if (k < 1) throw std::invalid_argument("NPG sandwich needs k >= 1");
  const double kk = static_cast<double>(k);
  BoundPair out;
  out.upper = 2.0 * c.r_inf / (1.0 - c.gamma) *
              std::exp(-c.delta * eta * (kk - 1.0) + c.c_npg * std::log(kk) + c.c_npg);
  out.lower = c.delta * d_pi_k_min_offmass *
              std::exp(-c.delta * eta * (kk - 1.0) - c.c_npg * std::log(kk) - c.c_npg -
                       4.0 * eta * c.r_inf / (1.0 - c.gamma));
  return out;
}

/// Overall error bound for entropy-regularized NPG with uniform reference:
/// the value gap of iterate k+1 is at most
///   2 r_inf e^delta (1-gamma)^{-1} tau^{-c_unif} e^{-delta/tau}
///   + 2 |S| r_inf sqrt(C) (1-gamma)^{-1} tau^{-1/2} e^{-eta tau (k-1)/2}.
/// Requires consts.c_cen (the run constant) to be filled in.
inline double thm61_overall(const BoundConstants& c, int n_states, int k, double eta,
                            double tau) {
  detail::require_finite_delta(c);
  if (!(tau > 0.0) || tau > 1.0) throw std::invalid_argument("overall bound needs tau in (0,1]");
  if (!(eta > 0.0) || eta > (1.0 - c.gamma) / tau + 1e-15)
    throw std::invalid_argument("overall bound needs 0 < eta <= (1-gamma)/tau");
  if (!std::isfinite(c.c_cen))
    throw std::invalid_argument("overall bound needs the run constant c_cen");
  const double kk = static_cast<double>(k);
  const double term1 = 2.0 * c.r_inf * std::exp(c.delta) / (1.0 - c.gamma) *
                       std::pow(tau, -c.c_unif) * std::exp(-c.delta / tau);
  const double term2 = 2.0 * static_cast<double>(n_states) * c.r_inf * std::sqrt(c.c_cen) /
                       (1.0 - c.gamma) / std::sqrt(tau) * std::exp(-eta * tau * (kk - 1.0) / 2.0);
  return term1 + term2;
}

/// The run constant of the regularized-NPG contraction:
///   C = ||Q_tau^{pi*_tau} - Q_tau^{pi_start}||_inf
///       + 2 tau (1 - eta tau/(1-gamma)) ||log pi*_tau - log pi_start||_inf.
inline double regularized_run_constant(const MdpInstance& m, const RegularizedSolution& star,
                                       const Matrix& pi_start, double eta, double tau) {
  const Matrix q_start = regularized_values(m, pi_start, tau).q;
  const double q_dist = (star.q_tau - q_start).cwiseAbs().maxCoeff();
  const double logpi_dist =
      (star.pi_star_tau.array().log() - pi_start.array().log()).abs().maxCoeff();
  return q_dist + 2.0 * tau * (1.0 - eta * tau / (1.0 - m.gamma)) * logpi_dist;
}

/// One certified inequality evaluation.  NaN bounds are "not applicable";
/// the pass flag covers only applicable sides, at tolerance 1e-9 (1 + r_inf).
struct BoundRow {
  std::string label;
  double x = 0.0;         ///< grid coordinate (t, k, or tau)
  double quantity = 0.0;  ///< measured value
  double upper = quiet_nan;
  double lower = quiet_nan;
  bool pass = true;
};

struct BoundReport {
  BoundConstants constants;
  std::vector<BoundRow> rows;
  double fitted_exponent = quiet_nan;
  double fitted_r2 = quiet_nan;
  bool pass = true;  ///< verdict: conjunction of all row passes
};

namespace detail {
inline void push_row(BoundReport& report, std::string label, double x, double quantity,
                     double upper, double lower, double tol) {
  BoundRow row;
  row.label = std::move(label);
  row.x = x;
  row.quantity = quantity;
  row.upper = upper;
  row.lower = lower;
  row.pass = !(std::isfinite(upper) && quantity > upper + tol) &&
             !(std::isfinite(lower) && quantity < lower - tol);
  report.pass = report.pass && row.pass;
  report.rows.push_back(std::move(row));
}
}  // namespace detail

/// Entry bounds for the Kakade flow at time t >= 1 (per state-action pair):
///   pi_t <= pi0 exp((A*(t-1) + D log t + 2 r_inf)/(1-gamma)),
///   pi_t >= pi0 exp((A*(t-1) - gamma D log t - 2 r_inf)/(1-gamma)),
/// with D = D_K(pi*, pi0).  Returns the worst signed violation margins
/// (positive = violated): first = upper side, second = lower side.
inline std::pair<double, double> flow_entry_margins(const BoundContext& ctx, const Matrix& pi_t,
                                                    double t) {
  const double g = ctx.consts.gamma, d = ctx.consts.dk_star_pi0, r = ctx.consts.r_inf;
  double worst_up = -std::numeric_limits<double>::infinity();
  double worst_lo = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < pi_t.rows(); ++s)
    for (int a = 0; a < pi_t.cols(); ++a) {
      const double astar = ctx.opt.bundle.adv(s, a);
      const double up = ctx.pi0(s, a) *
                        std::exp((astar * (t - 1.0) + d * std::log(t) + 2.0 * r) / (1.0 - g));
      const double lo = ctx.pi0(s, a) *
                        std::exp((astar * (t - 1.0) - g * d * std::log(t) - 2.0 * r) / (1.0 - g));
      worst_up = std::max(worst_up, pi_t(s, a) - up);
      worst_lo = std::max(worst_lo, lo - pi_t(s, a));
    }
  return {worst_up, worst_lo};
}

/// Entry bounds for unregularized NPG at iterate k >= 1, relative to both the
/// first iterate and the start policy, with c = c_npg:
///   pi_k <= pi_1 exp(A* eta (k-1)/(1-gamma) + c log k + c),
///   pi_k >= pi_1 exp(A* eta (k-1)/(1-gamma) - c log k),
///   pi_k <= pi_0 exp(A* eta (k-1)/(1-gamma) + c log k + c + 2 eta r/(1-gamma)),
///   pi_k >= pi_0 exp(A* eta k/(1-gamma) - c log k - c - 4 eta r/(1-gamma)).
/// Returns the worst signed violation margin over all four families.
inline double npg_entry_margin(const BoundContext& ctx, const Matrix& pi1, const Matrix& pi_k,
                               int k, double eta) {
  const double g = ctx.consts.gamma, c = ctx.consts.c_npg, r = ctx.consts.r_inf;
  const double kk = static_cast<double>(k);
  double worst = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < pi_k.rows(); ++s)
    for (int a = 0; a < pi_k.cols(); ++a) {
      const double astar = ctx.opt.bundle.adv(s, a);
      const double drift = astar * eta * (kk - 1.0) / (1.0 - g);
      const double up1 = pi1(s, a) * std::exp(drift + c * std::log(kk) + c);
      const double lo1 = pi1(s, a) * std::exp(drift - c * std::log(kk));
      const double up0 = ctx.pi0(s, a) *
                         std::exp(drift + c * std::log(kk) + c + 2.0 * eta * r / (1.0 - g));
      const double lo0 = ctx.pi0(s, a) * std::exp(astar * eta * kk / (1.0 - g) -
                                                  c * std::log(kk) - c -
                                                  4.0 * eta * r / (1.0 - g));
      worst = std::max({worst, pi_k(s, a) - up1, lo1 - pi_k(s, a), pi_k(s, a) - up0,
                        lo0 - pi_k(s, a)});
    }
  return worst;
}

/// Suboptimality sandwich for an arbitrary policy:
///   delta * offsum <= R* - R(pi) <= 2 r_inf (1-gamma)^{-1} offsum,
/// with offsum = sum over suboptimal (s,a) of d^pi(s) pi(a|s).
inline BoundPair suboptimality_sandwich(const MdpInstance& m, const BoundContext& ctx,
                                        const Matrix& pi) {
  detail::require_finite_delta(ctx.consts);
  const Vector d = state_occupancy(m, pi);
  double offsum = 0.0;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      if (!ctx.opt.is_optimal(s, a)) offsum += d[s] * pi(s, a);
  BoundPair out;
  out.lower = ctx.consts.delta * offsum;
  out.upper = 2.0 * ctx.consts.r_inf / (1.0 - ctx.consts.gamma) * offsum;
  return out;
}

/// Sandwich for the distance of a policy to its own divergence projection
/// pihat onto the optimal set:
///   sum_s d^{pihat}(s) offmass(s) <= D_K(pihat, pi) <= mx/(1-mx),
/// with offmass(s) = sum_{a not optimal} pi(a|s) and mx its max over states.
/// Returns {upper, lower} and the measured middle via the out parameter.
inline BoundPair projection_distance_sandwich(const MdpInstance& m, const BoundContext& ctx,
                                              const Matrix& pi, double* dk_measured) {
  const Matrix pihat = kakade_projection(m, pi, ctx.opt.optimal_actions);
  const Vector d_hat = state_occupancy(m, pihat);
  double lower = 0.0, mx = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    double off = 0.0;
    for (int a = 0; a < m.n_actions; ++a)
      if (!ctx.opt.is_optimal(s, a)) off += pi(s, a);
    lower += d_hat[s] * off;
    mx = std::max(mx, off);
  }
  BoundPair out;
  out.lower = lower;
  if (mx < 1.0) out.upper = mx / (1.0 - mx);
  if (dk_measured) *dk_measured = kakade_divergence(m, pihat, pi);
  return out;
}

/// Certifies a Kakade-flow trajectory against the full battery: the value
/// sandwich, the policy-error sandwich, entry bounds, the sublinear reward
/// bound R* - R(pi_t) <= D_K(pi*, pi0)/t, the sublinear value/advantage
/// bounds, and the suboptimality sandwich.  Also fills the trajectory's
/// reward_gap and dk_to_pistar diagnostics.
inline BoundReport certify_flow_trajectory(const MdpInstance& m, const BoundContext& ctx,
                                           FlowTrajectory& traj) {
  BoundReport report;
  report.constants = ctx.consts;
  const double tol = cert_tolerance(m);
  const double dk0 = ctx.consts.dk_star_pi0;
  traj.reward_gap.resize(traj.times.size());
  traj.dk_to_pistar.resize(traj.times.size());
  for (Eigen::Index i = 0; i < traj.times.size(); ++i) {
    const double t = traj.times[i];
    const Matrix& pi_t = traj.policies[static_cast<std::size_t>(i)];
    const double gap = optimality_gap(m, ctx.opt, pi_t);
    const double dk = kakade_divergence(m, ctx.pi_star, pi_t);
    traj.reward_gap[i] = gap;
    traj.dk_to_pistar[i] = dk;
    if (t <= 0.0) continue;

    detail::push_row(report, "sublinear_value_gap", t, gap, dk0 / t, 0.0, tol);
    const ValueBundle b = evaluate_policy(m, pi_t);
    detail::push_row(report, "sublinear_state_values", t, (ctx.v_star - b.v).maxCoeff(),
                     dk0 / t, 0.0, tol);
    const double adv_up = (b.adv - ctx.opt.bundle.adv).maxCoeff();
    const double adv_lo = (b.adv - ctx.opt.bundle.adv).minCoeff();
    detail::push_row(report, "sublinear_advantages_upper", t, adv_up, dk0 / t, quiet_nan, tol);
    detail::push_row(report, "sublinear_advantages_lower", t, adv_lo, quiet_nan,
                     -ctx.consts.gamma * dk0 / t, tol);

    const BoundPair sub = suboptimality_sandwich(m, ctx, pi_t);
    detail::push_row(report, "suboptimality_sandwich", t, gap, sub.upper, sub.lower, tol);

    if (t >= 1.0 && std::isfinite(ctx.consts.delta)) {
      const double offmass = min_state_offmass(m, ctx.opt, pi_t, ctx.pi0);
      const BoundPair v42 = thm42_bounds(ctx.consts, t, offmass);
      detail::push_row(report, "value_gap_exponential", t, gap, v42.upper, v42.lower, tol);
      const BoundPair p44 = thm44_bounds(ctx.consts, t);
      detail::push_row(report, "policy_error_exponential", t, dk, p44.upper, p44.lower, tol);
      const auto [up_margin, lo_margin] = flow_entry_margins(ctx, pi_t, t);
      detail::push_row(report, "entry_bounds_upper", t, up_margin, 0.0, quiet_nan, tol);
      detail::push_row(report, "entry_bounds_lower", t, lo_margin, 0.0, quiet_nan, tol);
    }
  }
  return report;
}

/// Certifies an unregularized NPG run: the exponential value sandwich, entry
/// bounds, the sublinear value bound with the NPG constant, and the recorded
/// progress inequalities.
inline BoundReport certify_npg_run(const MdpInstance& m, const BoundContext& ctx,
                                   const NpgRun& run) {
  BoundReport report;
  report.constants = ctx.consts;
  const double tol = cert_tolerance(m);
  const double eta = run.eta;
  const double sub_c = ctx.consts.dk_star_pi0 + 2.0 / (1.0 - m.gamma) * eta * ctx.consts.r_inf;
  if (run.iterates.size() < 2) return report;
  const Matrix& pi1 = run.iterates[1];
  for (std::size_t k = 1; k < run.iterates.size(); ++k) {
    const double kk = static_cast<double>(k);
    const Matrix& pi_k = run.iterates[k];
    const double gap = optimality_gap(m, ctx.opt, pi_k);
    const Vector v_k = evaluate_policy(m, pi_k).v;
    detail::push_row(report, "sublinear_state_values", kk, (ctx.v_star - v_k).maxCoeff(),
                     sub_c / (eta * kk), 0.0, tol);
    if (std::isfinite(ctx.consts.delta)) {
      const double offmass = min_state_offmass(m, ctx.opt, pi_k, ctx.pi0);
      const BoundPair v47 = thm47_bounds(ctx.consts, static_cast<int>(k), eta, offmass);
      detail::push_row(report, "value_gap_exponential", kk, gap, v47.upper, v47.lower, tol);
      detail::push_row(report, "entry_bounds", kk,
                       npg_entry_margin(ctx, pi1, pi_k, static_cast<int>(k), eta), 0.0,
                       quiet_nan, tol);
    }
  }
  for (Eigen::Index j = 0; j < run.progress_lhs.size(); ++j) {
    detail::push_row(report, "progress", static_cast<double>(j), run.progress_lhs[j], quiet_nan,
                     run.progress_rhs[j], tol);
    detail::push_row(report, "normalizer_at_least_one", static_cast<double>(j), run.min_z[j],
                     quiet_nan, 1.0, 1e-12);
  }
  return report;
}

/// Certifies a regularized NPG run against the geometric contraction bounds
///   ||Q*_tau - Q_tau^{pi_{k+1}}||_inf <= C (1 - eta tau)^k,
///   ||log pi*_tau - log pi_{k+1}||_inf <= 2 C tau^{-1} (1 - eta tau)^k,
/// and the overall value-gap bound; fills consts.c_cen for the run.
inline BoundReport certify_regularized_run(const MdpInstance& m, BoundContext& ctx,
                                           const NpgRun& run) {
  if (!(run.tau > 0.0)) throw std::invalid_argument("run is not regularized");
  BoundReport report;
  const double tol = cert_tolerance(m);
  const RegularizedSolution star = solve_entropy_regularized(m, uniform_policy(m), run.tau);
  ctx.consts.c_cen =
      regularized_run_constant(m, star, run.iterates.front(), run.eta, run.tau);
  report.constants = ctx.consts;
  const double contraction = 1.0 - run.eta * run.tau;
  for (std::size_t j = 1; j < run.iterates.size(); ++j) {
    const double k = static_cast<double>(j - 1);  // bound index: iterate j = k+1
    const double geo = std::pow(contraction, k);
    detail::push_row(report, "q_contraction", static_cast<double>(j), run.q_dist_tau[j],
                     ctx.consts.c_cen * geo, quiet_nan, tol);
    detail::push_row(report, "logpi_contraction", static_cast<double>(j),
                     run.logpi_dist_tau[j], 2.0 * ctx.consts.c_cen / run.tau * geo, quiet_nan,
                     tol);
    if (std::isfinite(ctx.consts.delta) && j >= 2) {
      const double gap = optimality_gap(m, ctx.opt, run.iterates[j]);
      const double overall = thm61_overall(ctx.consts, m.n_states, static_cast<int>(j) - 1,
                                           run.eta, run.tau);
      detail::push_row(report, "overall_value_gap", static_cast<double>(j), gap, overall,
                       quiet_nan, tol);
    }
  }
  return report;
}

/// Certifies the linear regularization-error estimate on a tau grid:
///   0 <= R* - R(pi*_tau) <= tau D_K(pi*, pi0),
/// and reports the exponential estimate next to the linear one so their
/// crossover is visible from the rows.
inline BoundReport prop23_check(const MdpInstance& m, const Matrix& pi0,
                                const std::vector<double>& tau_grid) {
  const BoundContext ctx = make_bound_context(m, pi0);
  BoundReport report;
  report.constants = ctx.consts;
  const double tol = cert_tolerance(m);
  for (const double tau : tau_grid) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau grid must be positive");
    const RegularizedSolution sol = solve_entropy_regularized(m, pi0, tau);
    const double gap = optimality_gap(m, ctx.opt, sol.pi_star_tau);
    detail::push_row(report, "linear_regularization_error", tau, gap,
                     tau * ctx.consts.dk_star_pi0, 0.0, tol);
    if (std::isfinite(ctx.consts.delta) && tau <= 1.0) {
      const double offmass = min_state_offmass(m, ctx.opt, sol.pi_star_tau, pi0);
      const BoundPair expo = thm42_bounds(ctx.consts, 1.0 / tau, offmass);
      detail::push_row(report, "exponential_regularization_error", tau, gap, expo.upper,
                       expo.lower, tol);
    }
  }
  return report;
}

/// Reward is Lipschitz in the policy:
///   |R(pi1) - R(pi2)| <= r_inf (1-gamma)^{-1} sum_s ||pi1(.|s) - pi2(.|s)||_1.
inline BoundPair reward_lipschitz_check(const MdpInstance& m, const Matrix& pi1,
                                        const Matrix& pi2) {
  BoundPair out;
  out.lower = std::abs(reward_of(m, pi1) - reward_of(m, pi2));  // measured value
  out.upper = m.reward_sup() / (1.0 - m.gamma) *
              (pi1 - pi2).cwiseAbs().rowwise().sum().sum();
  return out;
}

/// Ordinary least squares on transformed coordinates.
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
};

enum class FitModel { log_linear, log_log };

inline RateFit rate_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                        FitModel model) {
  if (xs.size() != ys.size()) throw std::invalid_argument("rate fit needs equal-length inputs");
  if (xs.size() < 10) throw std::invalid_argument("rate fit needs at least 10 points");
  const std::size_t n = xs.size();
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(ys[i] > 0.0)) throw std::invalid_argument("rate fit needs positive ordinates");
    if (model == FitModel::log_log && !(xs[i] > 0.0))
      throw std::invalid_argument("log-log fit needs positive abscissae");
    u[i] = model == FitModel::log_log ? std::log(xs[i]) : xs[i];
    v[i] = std::log(ys[i]);
  }
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suu = 0.0, suv = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    suu += (u[i] - mu) * (u[i] - mu);
    suv += (u[i] - mu) * (v[i] - mv);
    svv += (v[i] - mv) * (v[i] - mv);
  }
  if (suu <= 0.0) throw std::invalid_argument("rate fit has a degenerate design");
  RateFit fit;
  fit.slope = suv / suu;
  fit.intercept = mv - fit.slope * mu;
  if (svv > 0.0) {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = v[i] - (fit.intercept + fit.slope * u[i]);
      ss_res += e * e;
    }
    fit.r2 = 1.0 - ss_res / svv;
  }
  return fit;
}

/// First grid index admissible for asymptotic-rate fitting: where the
/// exponential value upper bound first falls below 10% of the initial gap
/// (the polynomial log-factor pollutes earlier slopes).  Returns the grid
/// size when no index qualifies.
inline Eigen::Index flow_fit_start(const BoundContext& ctx, const MdpInstance& m,
                                   const Vector& times, double initial_gap) {
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    if (times[i] < 1.0) continue;
    const BoundPair b = thm42_bounds(ctx.consts, times[i], 0.0);
    if (b.upper < 0.1 * initial_gap) return i;
  }
  return times.size();
}

/// NPG analogue with a measured fallback: prefer the first k where the
/// exponential upper bound is below 10% of the initial gap; when the bound
/// window leaves fewer than min_points iterations (small eta keeps the
/// polynomial factor dominant for hundreds of steps), fall back to the first
/// k whose measured gap is below 1% of the initial gap.
inline int npg_fit_start(const BoundContext& ctx, double eta, const std::vector<double>& gaps,
                         int min_points = 10) {
  const int k_max = static_cast<int>(gaps.size()) - 1;
  for (int k = 1; k <= k_max; ++k)
    if (thm47_bounds(ctx.consts, k, eta, 0.0).upper <
        0.1 * gaps[0]) {
      if (k_max - k + 1 >= min_points) return k;
      break;
    }
  for (int k = 1; k <= k_max; ++k)
    if (gaps[static_cast<std::size_t>(k)] <= 0.01 * gaps[0] && k_max - k + 1 >= min_points)
      return k;
  return std::max(1, k_max - min_points + 1);
}

/// Occupancy-weighted sigma divergence to the optimal policy, +inf when the
/// boundary makes it diverge (sigma >= 2 with a deterministic optimum).
inline double sigma_divergence_or_infinity(const MdpInstance& m, const SigmaRegularizer& reg,
                                           const Matrix& pi_star, const Matrix& pi0) {
  try {
    return sigma_potential_eval(reg, m, pi_star, pi0);
  } catch (const DivergenceInfiniteError&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Entry bounds for the sigma flow at time t >= 1.  The upper bound inverts
/// the Gronwall estimate of the entry derivative:
///   pi_t <= [ (1-sigma)((t-1) A* + D log t + 2 r_inf)/(1-gamma)
///             + pi0^{1-sigma} ]^{-1/(sigma-1)},
/// applicable when the bracket is positive and finite.  The lower bound is
/// the mirrored Gronwall estimate (lower advantage envelope
/// A* - gamma D/t integrated through the same separable ODE):
///   pi_t >= [ pi0^{1-sigma}
///             + (1-sigma)((t-1) A* - gamma D log t - 2 r_inf)/(1-gamma)
///           ]^{-1/(sigma-1)},
/// again applicable when the bracket is positive; D = D_Psi(pi*, pi0) and an
/// infinite D voids every log-term bound except at t = 1.
/// Returns worst signed violation margins {upper side, lower side} over all
/// applicable entries.
inline std::pair<double, double> sigma_entry_margins(const BoundContext& ctx,
                                                     const SigmaRegularizer& reg,
                                                     double d_psi, const Matrix& pi_t,
                                                     double t) {
  const double g = ctx.consts.gamma, r = ctx.consts.r_inf, sg = reg.sigma;
  const double log_t = std::log(t);
  double worst_up = -std::numeric_limits<double>::infinity();
  double worst_lo = worst_up;
  for (int s = 0; s < pi_t.rows(); ++s)
    for (int a = 0; a < pi_t.cols(); ++a) {
      const double astar = ctx.opt.bundle.adv(s, a);
      const double pw0 = std::pow(ctx.pi0(s, a), 1.0 - sg);
      const double log_term = log_t == 0.0 ? 0.0 : d_psi * log_t;
      // gamma = 0 removes the discount term entirely, even for infinite D.
      const double glog_term = g == 0.0 ? 0.0 : g * log_term;
      const double base_up =
          (1.0 - sg) * ((t - 1.0) * astar + log_term + 2.0 * r) / (1.0 - g) + pw0;
      if (std::isfinite(base_up) && base_up > 0.0)
        worst_up = std::max(worst_up, pi_t(s, a) - std::pow(base_up, -1.0 / (sg - 1.0)));
      const double base_lo =
          pw0 + (1.0 - sg) * ((t - 1.0) * astar - glog_term - 2.0 * r) / (1.0 - g);
      if (std::isfinite(base_lo) && base_lo > 0.0)
        worst_lo = std::max(worst_lo, std::pow(base_lo, -1.0 / (sg - 1.0)) - pi_t(s, a));
    }
  return {worst_up, worst_lo};
}

/// Certifies a sigma-flow trajectory: entry bounds at t >= 1 plus the
/// suboptimality sandwich; fills reward_gap/dk_to_pistar diagnostics.
/// Needs a unique optimal policy (the sigma projection onto a nontrivial
/// optimal face has no closed-form solver here).
inline BoundReport certify_sigma_trajectory(const MdpInstance& m, const BoundContext& ctx,
                                            const SigmaRegularizer& reg, FlowTrajectory& traj) {
  for (int s = 0; s < m.n_states; ++s)
    if (ctx.opt.optimal_actions[s].size() != 1)
      throw std::invalid_argument("sigma certification needs a unique optimal policy");
  BoundReport report;
  report.constants = ctx.consts;
  const double tol = cert_tolerance(m);
  const double d_psi = sigma_divergence_or_infinity(m, reg, ctx.pi_star, ctx.pi0);
  traj.reward_gap.resize(traj.times.size());
  traj.dk_to_pistar.resize(traj.times.size());
  for (Eigen::Index i = 0; i < traj.times.size(); ++i) {
    const double t = traj.times[i];
    const Matrix& pi_t = traj.policies[static_cast<std::size_t>(i)];
    traj.reward_gap[i] = optimality_gap(m, ctx.opt, pi_t);
    traj.dk_to_pistar[i] = kakade_divergence(m, ctx.pi_star, pi_t);
    if (t <= 0.0) continue;
    const BoundPair sub = suboptimality_sandwich(m, ctx, pi_t);
    detail::push_row(report, "suboptimality_sandwich", t, traj.reward_gap[i], sub.upper,
                     sub.lower, tol);
    if (t >= 1.0) {
      const auto [up_margin, lo_margin] = sigma_entry_margins(ctx, reg, d_psi, pi_t, t);
      detail::push_row(report, "entry_bounds_upper", t, up_margin, 0.0, quiet_nan, tol);
      detail::push_row(report, "entry_bounds_lower", t, lo_margin, 0.0, quiet_nan, tol);
    }
  }
  return report;
}

/// Least-squares decay exponent of log(gap) against log(t) over a time
/// window; the sigma-flow theory predicts -1/(sigma-1).
inline RateFit sigma_rate_fit(const FlowTrajectory& traj, double t_lo, double t_hi) {
  if (traj.reward_gap.size() != traj.times.size())
    throw std::invalid_argument("trajectory gaps not filled; certify it first");
  std::vector<double> xs, ys;
  for (Eigen::Index i = 0; i < traj.times.size(); ++i)
    if (traj.times[i] >= t_lo && traj.times[i] <= t_hi && traj.reward_gap[i] > 0.0) {
      xs.push_back(traj.times[i]);
      ys.push_back(traj.reward_gap[i]);
    }
  if (xs.size() < 10) throw std::invalid_argument("fit window holds fewer than 10 points");
  return rate_fit(xs, ys, FitModel::log_log);
}

/// The implicit-bias certificate: D_K(pi*, pi_{t_final}) for the flow started
/// at pi0, with the policy-error upper bound at t_final; the distance must
/// not exceed the bound.
struct ImplicitBiasResult {
  double dk_to_limit = 0.0;
  double bound = 0.0;
};

inline ImplicitBiasResult implicit_bias_check(const MdpInstance& m, const Matrix& pi0,
                                              double t_final, double ode_tol = 1e-10) {
  const BoundContext ctx = make_bound_context(m, pi0);
  detail::require_finite_delta(ctx.consts);
  Vector grid(1);
  grid << t_final;
  const Matrix pi_t = integrate_kakade_flow(m, pi0, grid, ode_tol).policies.front();
  ImplicitBiasResult out;
  out.dk_to_limit = kakade_divergence(m, ctx.pi_star, pi_t);
  const BoundPair p = thm44_bounds(ctx.consts, t_final);
  out.bound = p.upper;
  if (!std::isfinite(out.bound))
    throw std::runtime_error("policy-error bound vacuous at the requested time");
  if (out.dk_to_limit > out.bound + 1e-8)
    throw std::runtime_error("implicit-bias distance exceeds the certified bound");
  return out;
}

}  // namespace entroflow
