// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <stdexcept>

#include "entroflow/divergence.hpp"
#include "entroflow/evaluate.hpp"
#include "entroflow/mdp.hpp"

namespace entroflow {

/// One-parameter family of per-state convex regularizers with h''(x) = x^{-sigma}.
///
/// sigma = 1 is the entropy case h(x) = x log x (kept here only so the family
/// evaluation can be cross-checked against the KL-based code paths); sigma = 2
/// is the Burg potential h(x) = -log x; otherwise h(x) = x^{2-sigma} /
/// ((2-sigma)(1-sigma)), the antiderivative chain of x^{-sigma} with the sign
/// that makes h strictly convex on (0,1].
struct SigmaRegularizer {
  double sigma = 2.0;

  explicit SigmaRegularizer(double sigma_in) : sigma(sigma_in) {
    if (!(sigma > 1.0)) throw std::invalid_argument("sigma-family flows need sigma > 1");
  }
};

inline double sigma_h(double x, double sigma) {
  if (sigma == 1.0) return x <= 0.0 ? 0.0 : x * std::log(x);
  if (sigma == 2.0) return -std::log(x);
  return std::pow(x, 2.0 - sigma) / ((2.0 - sigma) * (1.0 - sigma));
}

inline double sigma_h_prime(double x, double sigma) {
  if (sigma == 1.0) return std::log(x) + 1.0;
  return std::pow(x, 1.0 - sigma) / (1.0 - sigma);
}

inline double sigma_h_second(double x, double sigma) { return std::pow(x, -sigma); }

/// Per-state Bregman divergence D_psi(p, q) = sum_a h(p_a) - h(q_a) -
/// h'(q_a)(p_a - q_a) for the sigma-family potential.
///
/// @throws DivergenceInfiniteError when the value is infinite: q on the
///         boundary (h' blows up for every sigma > 1), or p on the boundary
///         for sigma >= 2 (h(0) is infinite there).
inline double sigma_bregman(const Eigen::Ref<const Eigen::RowVectorXd>& p,
                            const Eigen::Ref<const Eigen::RowVectorXd>& q, double sigma) {
  double out = 0.0;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    if (q[a] <= 0.0)
      throw DivergenceInfiniteError("sigma Bregman divergence infinite: boundary reference");
    if (p[a] <= 0.0 && sigma >= 2.0 && !(sigma == 1.0))
      throw DivergenceInfiniteError("sigma Bregman divergence infinite: h(0) diverges");
    out += sigma_h(p[a], sigma) - sigma_h(q[a], sigma) - sigma_h_prime(q[a], sigma) * (p[a] - q[a]);
  }
  return out;
}

/// Occupancy-weighted regularizer divergence
///   D_Psi(pi, pi0) = sum_s d^pi(s) D_psi(pi(.|s), pi0(.|s)),
/// the sigma-family analogue of the Kakade divergence.
inline double sigma_potential_eval(const SigmaRegularizer& reg, const MdpInstance& m,
                                   const Matrix& pi, const Matrix& pi0) {
  const Vector d = state_occupancy(m, pi);
  double out = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    if (d[s] <= 0.0) continue;
    out += d[s] * sigma_bregman(pi.row(s), pi0.row(s), reg.sigma);
  }
  return out;
}

}  // namespace entroflow
