// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "entroflow/mdp.hpp"

namespace entroflow {

/// Deterministic random source.
///
/// std::mt19937_64 output is specified bit-exactly by the standard, but the
/// standard *distributions* are not; every transform here is hand-rolled so
/// that a given seed produces bit-identical instances and policies on every
/// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in {0, ..., n-1}, unbiased via rejection.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  /// Strictly positive probability vector from normalized uniform draws.
  Vector simplex_point(int n, double floor = 1e-3) {
    Vector p(n);
    for (int i = 0; i < n; ++i) p[i] = floor + uniform01();
    return p / p.sum();
  }

  /// Random interior policy with per-entry mass bounded away from zero.
  Matrix interior_policy(int n_states, int n_actions, double floor = 1e-3) {
    Matrix pi(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) pi.row(s) = simplex_point(n_actions, floor).transpose();
    return pi;
  }

  /// Random tangent field: zero row sums, entries O(1).
  Matrix tangent_field(int n_states, int n_actions) {
    Matrix w(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) w(s, a) = uniform01() - 0.5;
      w.row(s).array() -= w.row(s).mean();
    }
    return w;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace entroflow
