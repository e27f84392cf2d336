// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace entroflow {

using Vector = Eigen::VectorXd;
/// Dense real matrix; throughout the library the row index is the state and
/// the column index is the action (policies, rewards, Q-values, advantages,
/// tangent fields, state-action distributions all share this layout).
using Matrix = Eigen::MatrixXd;

/// Tolerance for probability-vector and kernel-row normalization checks.
inline constexpr double stochastic_tol = 1e-12;

/// A finite discounted MDP: transition kernel P(s'|s,a), instantaneous
/// reward r(s,a), discount gamma in [0,1), and initial state distribution mu.
///
/// The expected reward of a policy is always the (1-gamma)-normalized
/// discounted return R(pi) = (1-gamma) E[sum_t gamma^t r], so values live on
/// the same scale as instantaneous rewards for every discount factor.
struct MdpInstance {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  Vector mu;                       ///< initial state distribution
  Matrix reward;                   ///< r(s,a), n_states x n_actions
  std::vector<Matrix> transition;  ///< transition[s](a,s') = P(s'|s,a)

  /// Sup norm of the reward table, the ||r||_inf entering every bound.
  double reward_sup() const { return reward.size() ? reward.cwiseAbs().maxCoeff() : 0.0; }
};

namespace detail {
inline std::string at_sa(int s, int a) {
  std::ostringstream os;
  os << " at (s=" << s << ", a=" << a << ")";
  return os.str();
}
}  // namespace detail

/// Checks every structural invariant of an instance and returns it unchanged.
///
/// @throws std::invalid_argument naming the first violated invariant and the
///         offending indices.
inline MdpInstance validate_mdp(MdpInstance m) {
  if (m.n_states <= 0 || m.n_actions <= 0)
    throw std::invalid_argument("state and action counts must be positive");
  if (!(m.gamma >= 0.0) || !(m.gamma < 1.0))
    throw std::invalid_argument("discount must be < 1 (and >= 0)");
  if (m.mu.size() != m.n_states)
    throw std::invalid_argument("initial distribution has wrong length");
  if (m.reward.rows() != m.n_states || m.reward.cols() != m.n_actions)
    throw std::invalid_argument("reward table has wrong shape");
  if (static_cast<int>(m.transition.size()) != m.n_states)
    throw std::invalid_argument("transition kernel has wrong number of states");
  for (int s = 0; s < m.n_states; ++s) {
    const Matrix& ps = m.transition[s];
    if (ps.rows() != m.n_actions || ps.cols() != m.n_states)
      throw std::invalid_argument("transition block has wrong shape at s=" + std::to_string(s));
    for (int a = 0; a < m.n_actions; ++a) {
      if (ps.row(a).minCoeff() < 0.0)
        throw std::invalid_argument("kernel entry negative" + detail::at_sa(s, a));
      if (std::abs(ps.row(a).sum() - 1.0) > stochastic_tol)
        throw std::invalid_argument("kernel row not stochastic" + detail::at_sa(s, a));
    }
  }
  if (m.mu.minCoeff() < 0.0 || std::abs(m.mu.sum() - 1.0) > stochastic_tol)
    throw std::invalid_argument("initial distribution is not a probability vector");
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      if (!std::isfinite(m.reward(s, a)))
        throw std::invalid_argument("reward not finite" + detail::at_sa(s, a));
  return m;
}

/// True iff every row of pi is a probability vector within tol.
inline bool is_row_stochastic(const Matrix& pi, double tol = stochastic_tol) {
  if (pi.minCoeff() < -tol) return false;
  for (Eigen::Index s = 0; s < pi.rows(); ++s)
    if (std::abs(pi.row(s).sum() - 1.0) > tol) return false;
  return true;
}

/// True iff pi is entrywise strictly positive (required by flows and NPG).
inline bool is_interior(const Matrix& pi) { return pi.minCoeff() > 0.0; }

/// Checks that pi is a policy for the given instance.
/// @throws std::invalid_argument on shape or stochasticity violations.
inline void validate_policy(const MdpInstance& m, const Matrix& pi) {
  if (pi.rows() != m.n_states || pi.cols() != m.n_actions)
    throw std::invalid_argument("policy has wrong shape");
  if (!is_row_stochastic(pi))
    throw std::invalid_argument("policy rows must be probability vectors");
}

/// The uniform policy on an instance.
inline Matrix uniform_policy(const MdpInstance& m) {
  return Matrix::Constant(m.n_states, m.n_actions, 1.0 / m.n_actions);
}

// ---------------------------------------------------------------------------
// JSON serialization.  Schema:
//   { "n_states": int, "n_actions": int, "gamma": float,
//     "mu": [float], "reward": [[float]], "transition": [[[float]]] }
// with transition indexed [s][a][s'].
// ---------------------------------------------------------------------------

inline MdpInstance mdp_from_json(const nlohmann::json& j) {
  MdpInstance m;
  m.n_states = j.at("n_states").get<int>();
  m.n_actions = j.at("n_actions").get<int>();
  m.gamma = j.at("gamma").get<double>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  m.mu = Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  const auto rew = j.at("reward").get<std::vector<std::vector<double>>>();
  m.reward.resize(m.n_states, m.n_actions);
  if (static_cast<int>(rew.size()) != m.n_states)
    throw std::invalid_argument("reward table has wrong shape");
  for (int s = 0; s < m.n_states; ++s) {
    if (static_cast<int>(rew[s].size()) != m.n_actions)
      throw std::invalid_argument("reward table has wrong shape");
    for (int a = 0; a < m.n_actions; ++a) m.reward(s, a) = rew[s][a];
  }
  const auto& tr = j.at("transition");
  if (static_cast<int>(tr.size()) != m.n_states)
    throw std::invalid_argument("transition kernel has wrong number of states");
  m.transition.resize(m.n_states);
  for (int s = 0; s < m.n_states; ++s) {
    m.transition[s].resize(m.n_actions, m.n_states);
    if (static_cast<int>(tr[s].size()) != m.n_actions)
      throw std::invalid_argument("transition block has wrong shape at s=" + std::to_string(s));
    for (int a = 0; a < m.n_actions; ++a) {
      const auto row = tr[s][a].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != m.n_states)
        throw std::invalid_argument("transition row has wrong length" + detail::at_sa(s, a));
      for (int t = 0; t < m.n_states; ++t) m.transition[s](a, t) = row[t];
    }
  }
  return validate_mdp(std::move(m));
}

inline nlohmann::json mdp_to_json(const MdpInstance& m) {
  nlohmann::json j;
  j["n_states"] = m.n_states;
  j["n_actions"] = m.n_actions;
  j["gamma"] = m.gamma;
  j["mu"] = std::vector<double>(m.mu.data(), m.mu.data() + m.mu.size());
  std::vector<std::vector<double>> rew(m.n_states, std::vector<double>(m.n_actions));
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) rew[s][a] = m.reward(s, a);
  j["reward"] = rew;
  std::vector<std::vector<std::vector<double>>> tr(m.n_states);
  for (int s = 0; s < m.n_states; ++s) {
    tr[s].assign(m.n_actions, std::vector<double>(m.n_states));
    for (int a = 0; a < m.n_actions; ++a)
      for (int t = 0; t < m.n_states; ++t) tr[s][a][t] = m.transition[s](a, t);
  }
  j["transition"] = tr;
  return j;
}

/// Loads and validates an instance from a JSON file.
/// @throws std::runtime_error when the file cannot be opened;
///         nlohmann::json::parse_error on malformed JSON;
///         std::invalid_argument on invariant violations.
inline MdpInstance load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open MDP file: " + path);
  nlohmann::json j;
  in >> j;
  return mdp_from_json(j);
}

inline void save_mdp(const MdpInstance& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write MDP file: " + path);
  out << mdp_to_json(m).dump(2) << '\n';
}

}  // namespace entroflow
