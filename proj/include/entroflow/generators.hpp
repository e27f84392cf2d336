// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "entroflow/mdp.hpp"
#include "entroflow/rng.hpp"

namespace entroflow {

/// Two-state, two-action deterministic cycle graph: action a1 moves to s1
/// from everywhere, action a2 moves to s2 from everywhere; the only reward is
/// r(s1, a1) = reward_s1_a1.  The initial distribution defaults to uniform so
/// that both state occupancies stay bounded away from zero along policy
/// trajectories (a point-mass mu lets the occupancy of the other state decay
/// to zero, which distorts measured asymptotic rates).
inline MdpInstance make_two_cycle(double gamma = 0.9, double reward_s1_a1 = 1.0,
                                  Vector mu = Vector()) {
  MdpInstance m;
  m.n_states = 2;
  m.n_actions = 2;
  m.gamma = gamma;
  m.mu = mu.size() ? mu : Vector::Constant(2, 0.5);
  m.reward = Matrix::Zero(2, 2);
  m.reward(0, 0) = reward_s1_a1;
  m.transition.assign(2, Matrix::Zero(2, 2));
  for (int s = 0; s < 2; ++s) {
    m.transition[s](0, 0) = 1.0;  // a1 -> s1
    m.transition[s](1, 1) = 1.0;  // a2 -> s2
  }
  return validate_mdp(std::move(m));
}

/// Single-state MDP (a bandit) with the given reward vector and gamma = 0.
inline MdpInstance make_bandit(const Vector& rewards) {
  if (rewards.size() == 0) throw std::invalid_argument("bandit needs at least one action");
  MdpInstance m;
  m.n_states = 1;
  m.n_actions = static_cast<int>(rewards.size());
  m.gamma = 0.0;
  m.mu = Vector::Ones(1);
  m.reward = rewards.transpose();
  m.transition.assign(1, Matrix::Ones(m.n_actions, 1));
  return validate_mdp(std::move(m));
}

/// Three-armed bandit with rewards (1, 0.5, 0); the standard desk instance.
inline MdpInstance make_bandit3() {
  Vector r(3);
  r << 1.0, 0.5, 0.0;
  return make_bandit(r);
}

/// Deterministic chain: action a1 advances one state to the right (the last
/// state self-loops), action a2 stays put; reward 1 in the last state.
inline MdpInstance make_chain(int n_states, double gamma = 0.9) {
  if (n_states <= 0) throw std::invalid_argument("chain needs at least one state");
  MdpInstance m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.gamma = gamma;
  m.mu = Vector::Constant(n_states, 1.0 / n_states);
  m.reward = Matrix::Zero(n_states, 2);
  m.reward.row(n_states - 1).setOnes();
  m.transition.assign(n_states, Matrix::Zero(2, n_states));
  for (int s = 0; s < n_states; ++s) {
    m.transition[s](0, std::min(s + 1, n_states - 1)) = 1.0;  // advance
    m.transition[s](1, s) = 1.0;                              // stay
  }
  return validate_mdp(std::move(m));
}

/// Seeded Garnet instance: for every (s,a) a sparse kernel row supported on
/// `branching` distinct next states with normalized-uniform masses, and a
/// uniform(0,1) reward.  Draw order is fixed (rewards first, then support,
/// then masses, in row-major (s,a) order), so identical parameters and seed
/// give bit-identical instances.
inline MdpInstance make_garnet(int n_states, int n_actions, int branching, std::uint64_t seed,
                               double gamma = 0.9) {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("garnet sizes must be positive");
  if (branching <= 0 || branching > n_states)
    throw std::invalid_argument("garnet branching must lie in [1, n_states]");
  Rng rng(seed);
  MdpInstance m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.mu = Vector::Constant(n_states, 1.0 / n_states);
  m.reward.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) m.reward(s, a) = rng.uniform01();
  m.transition.assign(n_states, Matrix::Zero(n_actions, n_states));
  std::vector<int> order(n_states);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      Vector mass = rng.simplex_point(branching);
      for (int b = 0; b < branching; ++b) m.transition[s](a, order[static_cast<std::size_t>(b)]) = mass[b];
    }
  }
  return validate_mdp(std::move(m));
}

}  // namespace entroflow
