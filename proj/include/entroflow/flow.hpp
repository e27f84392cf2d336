// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "entroflow/divergence.hpp"
#include "entroflow/evaluate.hpp"
#include "entroflow/mdp.hpp"
#include "entroflow/ode.hpp"
#include "entroflow/sigma.hpp"
#include "entroflow/soft_solver.hpp"

namespace entroflow {

/// A gradient-flow trajectory sampled on an increasing time grid.
///
/// The integrators fill `times`, `policies`, `rewards` and
/// `max_renorm_drift`; the remaining per-point diagnostics need the optimal
/// structure and regularized solver and are filled by the certification layer
/// (they stay empty until then).
struct FlowTrajectory {
  Vector times;
  std::vector<Matrix> policies;
  Vector rewards;
  /// Largest per-row simplex drift |sum_a pi(a|s) - 1| observed before the
  /// post-step correction; identically 0 for logit-coordinate flows.
  double max_renorm_drift = 0.0;

  Vector reward_gap;           ///< R* - R(pi_t)
  Vector dk_to_pistar;         ///< D_K(pi*, pi_t)
  Vector dk_to_central_path;   ///< max_s KL(pi_t(.|s), pi*_{1/t}(.|s))
};

/// Per-state softmax of a logit matrix, computed with row max shifts.
inline Matrix policy_from_logits(const Matrix& z) {
  Matrix pi(z.rows(), z.cols());
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const Eigen::RowVectorXd shifted = z.row(s).array() - z.row(s).maxCoeff();
    const Eigen::RowVectorXd w = shifted.array().exp();
    pi.row(s) = w / w.sum();
  }
  return pi;
}

namespace detail {

inline void check_time_grid(const Vector& t_grid) {
  if (t_grid.size() == 0) throw std::invalid_argument("time grid must be nonempty");
  if (t_grid[0] < 0.0) throw std::invalid_argument("time grid must start at t >= 0");
  for (Eigen::Index k = 1; k < t_grid.size(); ++k)
    if (t_grid[k] <= t_grid[k - 1])
      throw std::invalid_argument("time grid must be strictly increasing");
}

inline OdeOptions flow_ode_options(double ode_tol) {
  if (!(ode_tol > 0.0)) throw std::invalid_argument("ode tolerance must be positive");
  OdeOptions opts;
  opts.abs_tol = ode_tol;
  opts.rel_tol = ode_tol;
  return opts;
}

inline void check_ascent(const FlowTrajectory& traj) {
  for (Eigen::Index k = 1; k < traj.rewards.size(); ++k)
    if (traj.rewards[k] < traj.rewards[k - 1] - 1e-9)
      throw std::runtime_error("flow reward decreased between samples " + std::to_string(k - 1) +
                               " and " + std::to_string(k));
}

}  // namespace detail

/// Integrates the Kakade gradient flow
///   d/dt pi_t(a|s) = (1-gamma)^{-1} A^{pi_t}(s,a) pi_t(a|s)
/// in logit coordinates: z evolves by zdot = (1-gamma)^{-1} A^{softmax(z)},
/// pi_t = per-state softmax(z_t).  The pushforward is exact because
/// advantages are pi-centered, and positivity/normalization are structural.
///
/// Samples the trajectory at the given strictly increasing grid (a leading
/// t = 0 records pi0 itself) and verifies reward ascent across samples.
inline FlowTrajectory integrate_kakade_flow(const MdpInstance& m, const Matrix& pi0,
                                            const Vector& t_grid, double ode_tol) {
  validate_policy(m, pi0);
  if (!is_interior(pi0)) throw std::invalid_argument("flow needs an interior start policy");
  detail::check_time_grid(t_grid);
  const OdeOptions opts = detail::flow_ode_options(ode_tol);

  const int S = m.n_states, A = m.n_actions;
  const auto rhs = [&](double, const Vector& zflat, Vector& dz) {
    const Matrix pi =
        policy_from_logits(Eigen::Map<const Matrix>(zflat.data(), S, A));
    const Matrix adv = evaluate_policy(m, pi).adv;
    Eigen::Map<Matrix>(dz.data(), S, A) = adv / (1.0 - m.gamma);
  };

  FlowTrajectory traj;
  traj.times = t_grid;
  traj.policies.reserve(static_cast<std::size_t>(t_grid.size()));
  traj.rewards.resize(t_grid.size());

  Vector z(S * A);
  Eigen::Map<Matrix>(z.data(), S, A) = pi0.array().log().matrix();
  double t_prev = 0.0;
  for (Eigen::Index k = 0; k < t_grid.size(); ++k) {
    integrate_ode(rhs, z, t_prev, t_grid[k], opts);
    t_prev = t_grid[k];
    Matrix pi = policy_from_logits(Eigen::Map<const Matrix>(z.data(), S, A));
    traj.rewards[k] = reward_of(m, pi);
    traj.policies.push_back(std::move(pi));
  }
  detail::check_ascent(traj);
  return traj;
}

/// Integrates the sigma-family Hessian gradient flow on the open simplex:
///   d/dt pi(a|s) = (1-gamma)^{-1} (A(s,a) - lambda_s) pi(a|s)^sigma,
///   lambda_s = sum_a A(s,a) pi(a|s)^sigma / sum_a pi(a|s)^sigma.
/// lambda_s is the multiplier that makes the metric gradient tangent to the
/// simplex (for sigma = 1 it vanishes identically and the field reduces to
/// the Kakade flow).  Discretization still drifts off the simplex, so each
/// accepted step renormalizes rows; the worst pre-correction drift is
/// recorded in the trajectory.  Entries are floored at 1e-300 so that
/// long-decayed coordinates cannot underflow or go negative inside trial
/// stages.
inline FlowTrajectory integrate_sigma_flow(const MdpInstance& m, const SigmaRegularizer& reg,
                                           const Matrix& pi0, const Vector& t_grid,
                                           double ode_tol) {
  validate_policy(m, pi0);
  if (!is_interior(pi0)) throw std::invalid_argument("flow needs an interior start policy");
  detail::check_time_grid(t_grid);
  const OdeOptions opts = detail::flow_ode_options(ode_tol);

  const int S = m.n_states, A = m.n_actions;
  constexpr double floor = 1e-300;
  const auto rhs = [&](double, const Vector& yflat, Vector& dy) {
    Matrix pi = Eigen::Map<const Matrix>(yflat.data(), S, A).cwiseMax(floor);
    for (int s = 0; s < S; ++s) pi.row(s) /= pi.row(s).sum();
    const Matrix adv = evaluate_policy(m, pi).adv;
    const Matrix pow_sigma = pi.array().pow(reg.sigma).matrix();
    Matrix f(S, A);
    for (int s = 0; s < S; ++s) {
      const double lambda =
          adv.row(s).dot(pow_sigma.row(s)) / pow_sigma.row(s).sum();
      f.row(s) = ((adv.row(s).array() - lambda) * pow_sigma.row(s).array()).matrix();
    }
    Eigen::Map<Matrix>(dy.data(), S, A) = f / (1.0 - m.gamma);
  };

  FlowTrajectory traj;
  traj.times = t_grid;
  traj.policies.reserve(static_cast<std::size_t>(t_grid.size()));
  traj.rewards.resize(t_grid.size());

  Vector y(S * A);
  Eigen::Map<Matrix>(y.data(), S, A) = pi0;
  const auto renormalize = [&](double, Vector& yflat) {
    Eigen::Map<Matrix> pi(yflat.data(), S, A);
    pi = pi.cwiseMax(floor);
    for (int s = 0; s < S; ++s) {
      const double mass = pi.row(s).sum();
      traj.max_renorm_drift = std::max(traj.max_renorm_drift, std::abs(mass - 1.0));
      pi.row(s) /= mass;
    }
    return true;
  };

  double t_prev = 0.0;
  for (Eigen::Index k = 0; k < t_grid.size(); ++k) {
    integrate_ode(rhs, y, t_prev, t_grid[k], opts, renormalize);
    t_prev = t_grid[k];
    Matrix pi = Eigen::Map<const Matrix>(y.data(), S, A);
    traj.rewards[k] = reward_of(m, pi);
    traj.policies.push_back(std::move(pi));
  }
  detail::check_ascent(traj);
  return traj;
}

/// Certifies the central-path property at a single time: integrates the
/// Kakade flow to time t and solves the tau = 1/t regularized problem
/// independently, returning max_s KL(pi_t^flow(.|s), pi*_{1/t}(.|s)).
inline double central_path_check(const MdpInstance& m, const Matrix& pi0, double t,
                                 double ode_tol, double solver_tol) {
  if (!(t > 0.0)) throw std::invalid_argument("central path check needs t > 0");
  Vector grid(1);
  grid << t;
  const Matrix pi_flow = integrate_kakade_flow(m, pi0, grid, ode_tol).policies.front();
  const Matrix pi_central = solve_entropy_regularized(m, pi0, 1.0 / t, solver_tol).pi_star_tau;
  double worst = 0.0;
  for (int s = 0; s < m.n_states; ++s)
    worst = std::max(worst, kl_divergence(pi_flow.row(s), pi_central.row(s)));
  return worst;
}

}  // namespace entroflow
