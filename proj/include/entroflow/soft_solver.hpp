// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "entroflow/divergence.hpp"
#include "entroflow/evaluate.hpp"
#include "entroflow/mdp.hpp"

namespace entroflow {

/// Solution of an entropy/KL-regularized reward-maximization problem
///   max_pi R(pi) - tau * D_K(pi, pi0).
struct RegularizedSolution {
  double tau = 0.0;
  Matrix pi_star_tau;  ///< optimizer, strictly positive on its support
  Vector v_tau;        ///< regularized optimal value V*_tau
  Matrix q_tau;        ///< regularized optimal Q*_tau
  double residual = 0.0;
  long iterations = 0;
};

/// Default stopping residual for the soft fixed-point iteration.
inline double soft_tolerance(const MdpInstance& m, double tau) {
  return 1e-12 * std::max(tau, 1.0) * (1.0 + m.reward_sup());
}

/// Soft value iteration with a general log-reference.
///
/// Iterates the soft optimality operator
///   (T V)(s) = beta * log sum_a exp(log_ref(s,a) + Q(s,a)/beta),
///   Q(s,a)   = (1-gamma) r(s,a) + gamma sum_{s'} P(s'|s,a) V(s'),
/// with inverse temperature beta = (1-gamma) * tau.  With log_ref = log pi0
/// the fixed point solves max R - tau D_K(., pi0): the flow of the matching
/// Kakade gradient ascent at time t = 1/tau passes through the same policy,
/// which pins the (1-gamma) factor in beta (a plain tau temperature is off the
/// central path for every gamma > 0).
///
/// Entries with log_ref = -inf are excluded from the action set, and rows of
/// exp(log_ref) need not be normalized; both generalities are what the
/// divergence projection onto optimal faces requires.
///
/// The returned policy is pi(a|s) proportional to exp(log_ref + Q/beta),
/// computed with per-state max shifts.
inline RegularizedSolution soft_value_iteration(const MdpInstance& m, const Matrix& log_ref,
                                                double tau, double tol) {
  if (!(tau > 0.0)) throw std::invalid_argument("regularization strength must be positive");
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  const double beta = (1.0 - m.gamma) * tau;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < m.n_states; ++s)
    if (log_ref.row(s).maxCoeff() == neg_inf)
      throw std::invalid_argument("reference excludes every action at s=" + std::to_string(s));

  RegularizedSolution sol;
  sol.tau = tau;
  Vector v = Vector::Zero(m.n_states);
  Matrix q(m.n_states, m.n_actions);
  const auto apply = [&](const Vector& vin) -> Vector {
    Vector vout(m.n_states);
    for (int s = 0; s < m.n_states; ++s) {
      q.row(s) = (1.0 - m.gamma) * m.reward.row(s) + m.gamma * (m.transition[s] * vin).transpose();
      double shift = neg_inf;
      for (int a = 0; a < m.n_actions; ++a)
        if (log_ref(s, a) != neg_inf) shift = std::max(shift, log_ref(s, a) + q(s, a) / beta);
      double acc = 0.0;
      for (int a = 0; a < m.n_actions; ++a)
        if (log_ref(s, a) != neg_inf) acc += std::exp(log_ref(s, a) + q(s, a) / beta - shift);
      vout[s] = beta * (shift + std::log(acc));
    }
    return vout;
  };
  constexpr long max_iterations = 1000000;
  for (sol.iterations = 0; sol.iterations < max_iterations; ++sol.iterations) {
    Vector vnext = apply(v);
    sol.residual = (vnext - v).cwiseAbs().maxCoeff();
    v = vnext;
    if (sol.residual <= tol) break;
  }
  if (sol.residual > tol)
    throw std::runtime_error("soft value iteration: max iterations exceeded, residual " +
                             std::to_string(sol.residual));
  v = apply(v);  // refresh q at the fixed point
  sol.v_tau = v;
  sol.q_tau = q;
  sol.pi_star_tau.resize(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s) {
    double shift = neg_inf;
    for (int a = 0; a < m.n_actions; ++a)
      if (log_ref(s, a) != neg_inf) shift = std::max(shift, log_ref(s, a) + q(s, a) / beta);
    double mass = 0.0;
    for (int a = 0; a < m.n_actions; ++a) {
      const double w =
          log_ref(s, a) == neg_inf ? 0.0 : std::exp(log_ref(s, a) + q(s, a) / beta - shift);
      sol.pi_star_tau(s, a) = w;
      mass += w;
    }
    sol.pi_star_tau.row(s) /= mass;
  }
  return sol;
}

/// Solves max_pi R(pi) - tau * D_K(pi, pi0) for an interior reference policy.
inline RegularizedSolution solve_entropy_regularized(const MdpInstance& m, const Matrix& pi0,
                                                     double tau,
                                                     double tol = -1.0) {
  validate_policy(m, pi0);
  if (!is_interior(pi0)) throw std::invalid_argument("reference policy must be interior");
  return soft_value_iteration(m, pi0.array().log().matrix(), tau,
                              tol > 0.0 ? tol : soft_tolerance(m, tau));
}

/// Regularized reward R_tau(pi) = R(pi) - tau * D_K(pi, pi0).
inline double evaluate_regularized_reward(const MdpInstance& m, const Matrix& pi, const Matrix& pi0,
                                          double tau) {
  return reward_of(m, pi) - tau * kakade_divergence(m, pi, pi0);
}

/// Divergence projection onto per-state faces: the minimizer of D_K(., pi0)
/// over policies supported in the given action subsets.
///
/// Computed by solving the face-restricted zero-reward problem
/// max -D_K(pi, pi0) with the soft solver at tau = 1 (the masked, unnormalized
/// reference keeps the objective equal to the restricted Kakade divergence).
/// First-order optimality is verified by central finite differences of
/// D_K(., pi0) along face-tangent directions.
inline Matrix kakade_projection(const MdpInstance& m, const Matrix& pi0,
                                const std::vector<std::vector<int>>& faces) {
  validate_policy(m, pi0);
  if (!is_interior(pi0)) throw std::invalid_argument("reference policy must be interior");
  if (static_cast<int>(faces.size()) != m.n_states)
    throw std::invalid_argument("need one face per state");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Matrix log_ref = Matrix::Constant(m.n_states, m.n_actions, neg_inf);
  for (int s = 0; s < m.n_states; ++s) {
    if (faces[s].empty()) throw std::invalid_argument("empty face at s=" + std::to_string(s));
    for (int a : faces[s]) {
      if (a < 0 || a >= m.n_actions) throw std::invalid_argument("face index out of range");
      log_ref(s, a) = std::log(pi0(s, a));
    }
  }
  MdpInstance zero = m;
  zero.reward.setZero();
  const Matrix pihat =
      soft_value_iteration(zero, log_ref, 1.0, soft_tolerance(zero, 1.0)).pi_star_tau;

  // Certify stationarity on the face tangent space.
  for (int s = 0; s < m.n_states; ++s) {
    if (faces[s].size() < 2) continue;
    double min_entry = 1.0;
    for (int a : faces[s]) min_entry = std::min(min_entry, pihat(s, a));
    const double h = 1e-6 * min_entry;
    for (std::size_t j = 1; j < faces[s].size(); ++j) {
      Matrix up = pihat, dn = pihat;
      up(s, faces[s][0]) -= h;
      up(s, faces[s][j]) += h;
      dn(s, faces[s][0]) += h;
      dn(s, faces[s][j]) -= h;
      const double deriv =
          (kakade_divergence(m, up, pi0) - kakade_divergence(m, dn, pi0)) / (2.0 * h);
      if (std::abs(deriv) > 1e-8)
        throw std::runtime_error("divergence projection not stationary on face tangent space");
    }
  }
  return pihat;
}

/// Both sides of the divergence-projection Pythagorean relation for a policy
/// pi supported in the faces:
///   D_K(pi, pi0) >= D_K(pi, pihat) + D_K(pihat, pi0),
/// with equality on affine face classes.
struct PythagorasResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;  ///< lhs - rhs
};

inline PythagorasResult pythagoras_check(const MdpInstance& m, const Matrix& pi0,
                                         const std::vector<std::vector<int>>& faces,
                                         const Matrix& pi) {
  const Matrix pihat = kakade_projection(m, pi0, faces);
  PythagorasResult out;
  out.lhs = kakade_divergence(m, pi, pi0);
  out.rhs = kakade_divergence(m, pi, pihat) + kakade_divergence(m, pihat, pi0);
  out.gap = out.lhs - out.rhs;
  return out;
}

/// The generalized maximum-entropy optimal policy: the minimizer of
/// D_K(., pi0) over the optimal-policy set, i.e. the divergence projection
/// onto the optimal faces A*_s.  Certifies optimality of the result.
inline Matrix max_entropy_optimal_policy(const MdpInstance& m, const Matrix& pi0) {
  const OptimalStructure opt = optimal_structure(m);
  const Matrix pistar = kakade_projection(m, pi0, opt.optimal_actions);
  const double gap = opt.r_star - reward_of(m, pistar);
  if (std::abs(gap) > cert_tolerance(m))
    throw std::runtime_error("projected policy is not optimal: residual gap " +
                             std::to_string(gap));
  return pistar;
}

}  // namespace entroflow
