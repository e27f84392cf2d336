// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "entroflow/mdp.hpp"

namespace entroflow {

/// Value-iteration stopping residual; Delta enters rate exponents, so the
/// optimal bundle is refined far below certification tolerances.
inline double vi_tolerance(const MdpInstance& m) { return 1e-13 * (1.0 + m.reward_sup()); }

/// Tolerance for declaring an optimal advantage entry to be an exact zero
/// (tie detection); scaled absolute, since solver residuals pollute zeros.
inline double tie_tolerance(const MdpInstance& m) { return 1e-9 * (1.0 + m.reward_sup()); }

/// Tolerance for bound certificates: inequalities are exact mathematics, the
/// slack only covers floating point and solver residuals.
inline double cert_tolerance(const MdpInstance& m) { return 1e-9 * (1.0 + m.reward_sup()); }

/// Value functions of a policy (or of the optimal policy): V, Q and the
/// advantage A = Q - V, all on the (1-gamma)-normalized reward scale.
struct ValueBundle {
  Vector v;    ///< V(s)
  Matrix q;    ///< Q(s,a)
  Matrix adv;  ///< A(s,a) = Q(s,a) - V(s)
};

/// State distribution d and state-action distribution nu(s,a) = d(s) pi(a|s).
struct Occupancy {
  Vector d;
  Matrix nu;
};

/// Mean transition kernel under pi: row s equals pi(.|s) P(.|s,.).
inline Matrix mean_kernel(const MdpInstance& m, const Matrix& pi) {
  Matrix pbar(m.n_states, m.n_states);
  for (int s = 0; s < m.n_states; ++s) pbar.row(s) = pi.row(s) * m.transition[s];
  return pbar;
}

/// Exact policy evaluation by a dense linear solve of the Bellman equation
///   V = (1-gamma) r_pi + gamma Pbar_pi V,
/// then Q(s,a) = (1-gamma) r(s,a) + gamma sum_{s'} P(s'|s,a) V(s').
inline ValueBundle evaluate_policy(const MdpInstance& m, const Matrix& pi) {
  const Matrix pbar = mean_kernel(m, pi);
  const Vector r_pi = (pi.array() * m.reward.array()).rowwise().sum();
  const Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.gamma * pbar;
  ValueBundle b;
  b.v = lhs.partialPivLu().solve((1.0 - m.gamma) * r_pi);
  if (!b.v.allFinite()) throw std::runtime_error("policy evaluation solve failed");
  b.q.resize(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    b.q.row(s) = (1.0 - m.gamma) * m.reward.row(s) + m.gamma * (m.transition[s] * b.v).transpose();
  b.adv = b.q.colwise() - b.v;
  return b;
}

/// Discounted state occupancy: the solution of d = (1-gamma) mu + gamma Pbar^T d.
inline Vector state_occupancy(const MdpInstance& m, const Matrix& pi) {
  const Matrix pbar = mean_kernel(m, pi);
  const Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.gamma * pbar.transpose();
  Vector d = lhs.partialPivLu().solve((1.0 - m.gamma) * m.mu);
  if (!d.allFinite()) throw std::runtime_error("occupancy solve failed");
  return d;
}

inline Occupancy occupancy_of(const MdpInstance& m, const Matrix& pi) {
  Occupancy o;
  o.d = state_occupancy(m, pi);
  o.nu = o.d.asDiagonal() * pi;
  return o;
}

/// (1-gamma)-normalized expected discounted reward R(pi) = <r, nu^pi> = <mu, V^pi>.
inline double reward_of(const MdpInstance& m, const Matrix& pi) {
  const Occupancy o = occupancy_of(m, pi);
  return (m.reward.array() * o.nu.array()).sum();
}

/// Residuals of the occupancy-polytope constraints
///   l_s(nu) = sum_a nu(s,a) - gamma sum_{s',a'} P(s|s',a') nu(s',a') - (1-gamma) mu(s);
/// every valid state-action distribution satisfies l_s = 0.
inline Vector polytope_residual(const MdpInstance& m, const Matrix& nu) {
  Vector ell = nu.rowwise().sum() - (1.0 - m.gamma) * m.mu;
  for (int sp = 0; sp < m.n_states; ++sp)
    ell -= m.gamma * (m.transition[sp].transpose() * nu.row(sp).transpose());
  return ell;
}

/// Optimal values plus the tie structure shared by all convergence bounds.
struct OptimalStructure {
  ValueBundle bundle;                            ///< V*, Q*, A*
  std::vector<std::vector<int>> optimal_actions; ///< A*_s per state
  std::optional<double> delta;                   ///< Delta; empty = every action optimal
  double r_star = 0.0;                           ///< R* = <mu, V*>
  double tie_tol = 0.0;

  bool is_optimal(int s, int a) const {
    const auto& acts = optimal_actions[static_cast<std::size_t>(s)];
    return std::find(acts.begin(), acts.end(), a) != acts.end();
  }
};

/// Computes the optimal bundle by value iteration followed by policy-iteration
/// refinement (greedy extraction + exact linear solves), so that V* carries
/// linear-solver accuracy rather than the value-iteration stopping residual.
inline OptimalStructure optimal_structure_mu(const MdpInstance& m, const Vector& mu,
                                             std::optional<double> tie_tol_opt = std::nullopt) {
  const double vi_tol = vi_tolerance(m);
  Vector v = Vector::Zero(m.n_states);
  Matrix q(m.n_states, m.n_actions);
  const auto apply_q = [&](const Vector& vin) {
    for (int s = 0; s < m.n_states; ++s)
      q.row(s) = (1.0 - m.gamma) * m.reward.row(s) + m.gamma * (m.transition[s] * vin).transpose();
  };
  for (long iter = 0;; ++iter) {
    apply_q(v);
    const Vector vnext = q.rowwise().maxCoeff();
    const double resid = (vnext - v).cwiseAbs().maxCoeff();
    v = vnext;
    if (resid <= vi_tol) break;
    if (iter > 1000000) throw std::runtime_error("value iteration failed to converge");
  }
  // Policy-iteration polish: extract the greedy policy, evaluate it exactly,
  // repeat until the greedy selection is stable.  The final V* then carries
  // linear-solver accuracy.
  std::vector<int> greedy(m.n_states, -1);
  for (int round = 0; round < 200; ++round) {
    apply_q(v);
    std::vector<int> next(m.n_states, 0);
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 1; a < m.n_actions; ++a)
        if (q(s, a) > q(s, next[s])) next[s] = a;
    if (next == greedy) break;
    greedy = next;
    Matrix pig = Matrix::Zero(m.n_states, m.n_actions);
    for (int s = 0; s < m.n_states; ++s) pig(s, greedy[s]) = 1.0;
    v = evaluate_policy(m, pig).v;
  }
  OptimalStructure out;
  apply_q(v);
  out.bundle.v = v;
  out.bundle.q = q;
  out.bundle.adv = q.colwise() - v;
  out.tie_tol = tie_tol_opt.value_or(tie_tolerance(m));
  out.optimal_actions.resize(m.n_states);
  double min_gap = std::numeric_limits<double>::infinity();
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      if (out.bundle.adv(s, a) >= -out.tie_tol)
        out.optimal_actions[s].push_back(a);
      else
        min_gap = std::min(min_gap, -out.bundle.adv(s, a));
    }
    if (out.optimal_actions[s].empty())
      throw std::runtime_error("tie detection produced an empty optimal action set");
  }
  if (std::isfinite(min_gap)) out.delta = min_gap / (1.0 - m.gamma);
  out.r_star = mu.dot(out.bundle.v);
  return out;
}

inline OptimalStructure optimal_structure(const MdpInstance& m,
                                          std::optional<double> tie_tol_opt = std::nullopt) {
  return optimal_structure_mu(m, m.mu, tie_tol_opt);
}

/// Both sides of the performance-difference identity
///   R(pi1) - R(pi2) = (1-gamma)^{-1} sum_{s,a} nu^{pi1}(s,a) A^{pi2}(s,a).
inline std::pair<double, double> performance_difference(const MdpInstance& m, const Matrix& pi1,
                                                        const Matrix& pi2) {
  const double lhs = reward_of(m, pi1) - reward_of(m, pi2);
  const Occupancy o1 = occupancy_of(m, pi1);
  const ValueBundle b2 = evaluate_policy(m, pi2);
  const double rhs = (o1.nu.array() * b2.adv.array()).sum() / (1.0 - m.gamma);
  return {lhs, rhs};
}

/// Optimality gap R* - R(pi) computed through the performance-difference
/// identity: a sum of nonnegative terms -nu(s,a) A*(s,a), which keeps relative
/// accuracy even when the gap is hundreds of orders of magnitude below 1
/// (direct subtraction of rewards loses everything past 1e-16).
inline double optimality_gap(const MdpInstance& m, const OptimalStructure& opt, const Matrix& pi) {
  const Occupancy o = occupancy_of(m, pi);
  double gap = 0.0;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      // Optimal actions carry advantage zero up to solver residual; skipping
      // them removes that residual from the sum instead of letting it dominate
      // tiny gaps.
      const bool optimal_a =
          std::find(opt.optimal_actions[s].begin(), opt.optimal_actions[s].end(), a) !=
          opt.optimal_actions[s].end();
      if (!optimal_a) gap -= o.nu(s, a) * opt.bundle.adv(s, a);
    }
  return gap / (1.0 - m.gamma);
}

/// State-exploration check: the uniform policy must visit every state with
/// positive discounted occupancy (required for metric positive-definiteness).
inline bool check_state_exploration(const MdpInstance& m) {
  return state_occupancy(m, uniform_policy(m)).minCoeff() > 0.0;
}

}  // namespace entroflow
