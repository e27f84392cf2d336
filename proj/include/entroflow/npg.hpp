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
#include "entroflow/soft_solver.hpp"

namespace entroflow {

/// One natural-policy-gradient update with its per-state normalizers.
struct NpgStep {
  Matrix next;
  Vector z;      ///< Z(s) = sum_a pi(a|s) exp(eta A(s,a)/(1-gamma)), always >= 1
  Vector log_z;  ///< log Z(s), computed with max shifts
};

/// Tabular softmax NPG update
///   next(a|s) = pi(a|s) exp(eta A^pi(s,a)/(1-gamma)) / Z(s).
inline NpgStep npg_step(const MdpInstance& m, const Matrix& pi, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("stepsize must be positive");
  if (!is_interior(pi)) throw std::invalid_argument("NPG needs an interior policy");
  const Matrix adv = evaluate_policy(m, pi).adv;
  const Matrix x = pi.array().log().matrix() + eta / (1.0 - m.gamma) * adv;
  NpgStep out;
  out.next.resize(m.n_states, m.n_actions);
  out.z.resize(m.n_states);
  out.log_z.resize(m.n_states);
  for (int s = 0; s < m.n_states; ++s) {
    const double shift = x.row(s).maxCoeff();
    const Eigen::RowVectorXd w = (x.row(s).array() - shift).exp();
    const double mass = w.sum();
    out.next.row(s) = w / mass;
    out.log_z[s] = shift + std::log(mass);
    out.z[s] = std::exp(out.log_z[s]);
  }
  return out;
}

/// A discrete NPG run with per-step diagnostics.
///
/// `iterates` holds k_max+1 policies starting at the initial one; the
/// step-indexed vectors have length k_max (entry j belongs to the update
/// pi_j -> pi_{j+1}).  The tau > 0 distance diagnostics are per-iterate
/// (length k_max+1) and empty for unregularized runs.
struct NpgRun {
  double eta = 0.0;
  double tau = 0.0;
  std::vector<Matrix> iterates;
  Vector rewards;         ///< per iterate
  Vector min_z;           ///< per step: min_s Z_k(s)
  Vector mu_log_z;        ///< per step: sum_s mu(s) log Z_k(s)
  Vector progress_lhs;    ///< per step: R(pi_{k+1}) - R(pi_k)
  Vector progress_rhs;    ///< per step: (1-gamma) eta^{-1} sum_s mu(s) log Z_k(s)
  Vector q_dist_tau;      ///< per iterate: ||Q*_tau - Q_tau^{pi_k}||_inf (tau > 0)
  Vector logpi_dist_tau;  ///< per iterate: ||log pi*_tau - log pi_k||_inf (tau > 0)
};

/// Runs k_max unregularized NPG steps and certifies the ascent and sublinear
/// guarantees along the way:
///  - Z_k(s) >= 1 (within 1e-12),
///  - progress: R(pi_{k+1}) - R(pi_k) >= (1-gamma) eta^{-1} sum_s mu(s) log Z_k(s) >= 0,
///  - V^{pi_k}(s) nondecreasing in k for every s (within 1e-10),
///  - state-wise sublinear value bound
///      V*(s) - V^{pi_k}(s) <= (D_K(pi*, pi0) + 2 (1-gamma)^{-1} eta r_inf) / (eta k).
/// Violations throw; the guarantees are theorems for this exact update.
inline NpgRun npg_run_unregularized(const MdpInstance& m, const Matrix& pi0, double eta,
                                    int k_max) {
  validate_policy(m, pi0);
  if (!is_interior(pi0)) throw std::invalid_argument("NPG needs an interior start policy");
  if (k_max < 1) throw std::invalid_argument("need at least one step");

  const Matrix pi_star = max_entropy_optimal_policy(m, pi0);
  const Vector v_star = evaluate_policy(m, pi_star).v;
  const double sublinear_c =
      kakade_divergence(m, pi_star, pi0) + 2.0 / (1.0 - m.gamma) * eta * m.reward_sup();
  const double slack = 1e-9 * (1.0 + m.reward_sup());

  NpgRun run;
  run.eta = eta;
  run.iterates.reserve(static_cast<std::size_t>(k_max) + 1);
  run.rewards.resize(k_max + 1);
  run.min_z.resize(k_max);
  run.mu_log_z.resize(k_max);
  run.progress_lhs.resize(k_max);
  run.progress_rhs.resize(k_max);

  Matrix pi = pi0;
  Vector v_prev = evaluate_policy(m, pi).v;
  run.iterates.push_back(pi);
  run.rewards[0] = m.mu.dot(v_prev);
  for (int k = 0; k < k_max; ++k) {
    const NpgStep step = npg_step(m, pi, eta);
    if (step.z.minCoeff() < 1.0 - 1e-12)
      throw std::runtime_error("NPG normalizer below 1 at step " + std::to_string(k));
    const Vector v_next = evaluate_policy(m, step.next).v;
    if (((v_next - v_prev).array() < -1e-10).any())
      throw std::runtime_error("NPG state value decreased at step " + std::to_string(k));

    run.min_z[k] = step.z.minCoeff();
    run.mu_log_z[k] = m.mu.dot(step.log_z);
    run.progress_lhs[k] = m.mu.dot(v_next) - m.mu.dot(v_prev);
    run.progress_rhs[k] = (1.0 - m.gamma) / eta * run.mu_log_z[k];
    if (run.progress_lhs[k] < run.progress_rhs[k] - 1e-10)
      throw std::runtime_error("NPG progress inequality violated at step " + std::to_string(k));

    const double bound = sublinear_c / (eta * static_cast<double>(k + 1));
    if ((v_star - v_next).maxCoeff() > bound + slack)
      throw std::runtime_error("NPG sublinear value bound violated at step " + std::to_string(k));

    pi = step.next;
    v_prev = v_next;
    run.iterates.push_back(pi);
    run.rewards[k + 1] = m.mu.dot(v_next);
  }
  return run;
}

/// Entropy-regularized policy evaluation toward the uniform policy:
/// V solves V = (1-gamma)(r_pi - tau KL_pi,unif) + gamma Pbar_pi V with
/// KL_pi,unif(s) = KL(pi(.|s), unif), and Q(s,a) = (1-gamma) r(s,a)
/// + gamma sum_{s'} P(s'|s,a) V(s') (the next-state values carry the bonus).
struct RegularizedValues {
  Vector v;
  Matrix q;
};

inline RegularizedValues regularized_values(const MdpInstance& m, const Matrix& pi, double tau) {
  const Matrix unif = uniform_policy(m);
  Vector kl_pi(m.n_states);
  for (int s = 0; s < m.n_states; ++s) kl_pi[s] = kl_divergence(pi.row(s), unif.row(s));
  const Matrix pbar = mean_kernel(m, pi);
  const Vector r_pi = (pi.array() * m.reward.array()).rowwise().sum();
  const Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.gamma * pbar;
  RegularizedValues out;
  out.v = lhs.partialPivLu().solve((1.0 - m.gamma) * (r_pi - tau * kl_pi));
  if (!out.v.allFinite()) throw std::runtime_error("regularized evaluation solve failed");
  out.q.resize(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    out.q.row(s) = (1.0 - m.gamma) * m.reward.row(s) + m.gamma * (m.transition[s] * out.v).transpose();
  return out;
}

/// Entropy-regularized NPG update toward the uniform reference:
///   next(a|s) proportional to
///     pi(a|s)^{1 - eta tau/(1-gamma)} exp(eta Q_tau^pi(s,a)/(1-gamma)^2).
///
/// The exponent scaling makes pi*_tau the exact fixed point: substituting
/// pi*_tau proportional to exp(Q*_tau/((1-gamma) tau)) leaves the logits
/// unchanged up to per-state constants.  (With exp(eta Q_tau/(1-gamma)) the
/// update is not stationary at pi*_tau for any gamma > 0.)
inline Matrix npg_step_regularized(const MdpInstance& m, const Matrix& pi, const Matrix& pi0_ref,
                                   double eta, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("regularized NPG needs tau > 0");
  if (!(eta > 0.0) || eta > (1.0 - m.gamma) / tau + 1e-15)
    throw std::invalid_argument("stepsize must satisfy 0 < eta <= (1-gamma)/tau");
  if (!is_interior(pi)) throw std::invalid_argument("NPG needs an interior policy");
  const Matrix unif = uniform_policy(m);
  if ((pi0_ref - unif).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("regularized NPG requires the uniform reference policy");

  const Matrix q = regularized_values(m, pi, tau).q;
  const double mix = 1.0 - eta * tau / (1.0 - m.gamma);
  const Matrix x =
      mix * pi.array().log().matrix() + eta / ((1.0 - m.gamma) * (1.0 - m.gamma)) * q;
  Matrix next(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s) {
    const Eigen::RowVectorXd w = (x.row(s).array() - x.row(s).maxCoeff()).exp();
    next.row(s) = w / w.sum();
  }
  return next;
}

/// Runs entropy-regularized NPG from `pi_start` (uniform when empty) and
/// records sup-norm distances of Q_tau and log pi to the tau-regularized
/// optimum computed independently by the soft solver.
inline NpgRun npg_run_regularized(const MdpInstance& m, double eta, double tau, int k_max,
                                  const Matrix& pi_start = Matrix()) {
  if (k_max < 1) throw std::invalid_argument("need at least one step");
  const Matrix unif = uniform_policy(m);
  Matrix pi = pi_start.size() ? pi_start : unif;
  validate_policy(m, pi);

  const RegularizedSolution star = solve_entropy_regularized(m, unif, tau);
  const Matrix log_pi_star = star.pi_star_tau.array().log().matrix();

  NpgRun run;
  run.eta = eta;
  run.tau = tau;
  run.iterates.reserve(static_cast<std::size_t>(k_max) + 1);
  run.rewards.resize(k_max + 1);
  run.q_dist_tau.resize(k_max + 1);
  run.logpi_dist_tau.resize(k_max + 1);

  for (int k = 0; k <= k_max; ++k) {
    run.iterates.push_back(pi);
    run.rewards[k] = reward_of(m, pi);
    run.q_dist_tau[k] = (star.q_tau - regularized_values(m, pi, tau).q).cwiseAbs().maxCoeff();
    run.logpi_dist_tau[k] =
        (log_pi_star - pi.array().log().matrix()).cwiseAbs().maxCoeff();
    if (k < k_max) pi = npg_step_regularized(m, pi, unif, eta, tau);
  }
  return run;
}

}  // namespace entroflow
