// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "entroflow/evaluate.hpp"
#include "entroflow/mdp.hpp"

namespace entroflow {

/// Thrown when a KL-type divergence is infinite (mass on a null set of the
/// second argument).  A dedicated type lets bound certificates distinguish
/// "bound vacuous by infinite constant" from numerical overflow.
struct DivergenceInfiniteError : std::runtime_error {
  explicit DivergenceInfiniteError(const std::string& what) : std::runtime_error(what) {}
};

/// KL divergence between two probability rows with the continuous extension
/// 0 log 0 := 0.
/// @throws DivergenceInfiniteError when p > 0 where q = 0.
inline double kl_divergence(const Eigen::Ref<const Eigen::RowVectorXd>& p,
                            const Eigen::Ref<const Eigen::RowVectorXd>& q) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw DivergenceInfiniteError("KL divergence infinite: support mismatch");
    out += p[i] * std::log(p[i] / q[i]);
  }
  return out;
}

/// Kakade divergence D_K(pi1, pi2): the d^{pi1}-weighted sum of per-state KL
/// divergences between the two policies.
/// @throws DivergenceInfiniteError when pi1(a|s) > 0, d^{pi1}(s) > 0 and
///         pi2(a|s) = 0.
inline double kakade_divergence(const MdpInstance& m, const Matrix& pi1, const Matrix& pi2) {
  const Vector d = state_occupancy(m, pi1);
  double out = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    if (d[s] <= 0.0) continue;
    out += d[s] * kl_divergence(pi1.row(s), pi2.row(s));
  }
  return out;
}

/// Conditional KL divergence D_{A|S}(nu1, nu2) = sum_{s,a} nu1(s,a)
/// log(nu1(a|s)/nu2(a|s)); equal to D_KL(nu1,nu2) - D_KL(d1,d2) and to the
/// Kakade divergence of the conditioned policies.
inline double conditional_kl(const Occupancy& o1, const Occupancy& o2) {
  double out = 0.0;
  for (Eigen::Index s = 0; s < o1.nu.rows(); ++s) {
    if (o1.d[s] <= 0.0) continue;
    for (Eigen::Index a = 0; a < o1.nu.cols(); ++a) {
      const double p = o1.nu(s, a);
      if (p <= 0.0) continue;
      const double c1 = p / o1.d[s];
      if (o2.d[s] <= 0.0 || o2.nu(s, a) <= 0.0)
        throw DivergenceInfiniteError("conditional KL infinite: support mismatch");
      const double c2 = o2.nu(s, a) / o2.d[s];
      out += p * std::log(c1 / c2);
    }
  }
  return out;
}

/// Conditioning map: row-normalizes a nonnegative state-action matrix into a
/// policy; rows with zero mass become uniform.
inline Matrix condition(const Matrix& nu) {
  Matrix pi = nu;
  for (Eigen::Index s = 0; s < nu.rows(); ++s) {
    const double mass = nu.row(s).sum();
    if (mass > 0.0)
      pi.row(s) /= mass;
    else
      pi.row(s).setConstant(1.0 / static_cast<double>(nu.cols()));
  }
  return pi;
}

/// True iff w is a tangent field (zero row sums within tol).
inline bool is_tangent_field(const Matrix& w, double tol = 1e-12) {
  return w.rowwise().sum().cwiseAbs().maxCoeff() <= tol;
}

/// Kakade metric: g(w1, w2) = sum_s d^pi(s) sum_a w1(s,a) w2(s,a) / pi(a|s).
/// Overload taking a precomputed occupancy for tight inner loops.
inline double kakade_inner(const Vector& d, const Matrix& pi, const Matrix& w1, const Matrix& w2) {
  return (d.asDiagonal() * (w1.array() * w2.array() / pi.array()).matrix()).sum();
}

inline double kakade_inner(const MdpInstance& m, const Matrix& pi, const Matrix& w1,
                           const Matrix& w2) {
  if (!is_interior(pi)) throw std::invalid_argument("Kakade metric needs an interior policy");
  return kakade_inner(state_occupancy(m, pi), pi, w1, w2);
}

/// Gradient of the reward with respect to the Kakade metric:
///   grad(s,a) = (1-gamma)^{-1} A^pi(s,a) pi(a|s).
/// Rows sum to zero because advantages are pi-centered.
inline Matrix kakade_gradient(const MdpInstance& m, const Matrix& pi) {
  const ValueBundle b = evaluate_policy(m, pi);
  return (b.adv.array() * pi.array()).matrix() / (1.0 - m.gamma);
}

/// Information projection of a reference distribution onto a face (an action
/// subset): restrict and renormalize.  The minimum KL value over the face is
/// -log of the reference mass of the face.
struct FaceProjection {
  Vector proj;
  double kl = 0.0;
};

inline FaceProjection face_information_projection(const Vector& ref, const std::vector<int>& face) {
  if (face.empty()) throw std::invalid_argument("empty face");
  double mass = 0.0;
  for (int a : face) {
    if (a < 0 || a >= ref.size()) throw std::invalid_argument("face index out of range");
    mass += ref[a];
  }
  if (mass <= 0.0) throw std::invalid_argument("reference vanishes on face");
  FaceProjection out;
  out.proj = Vector::Zero(ref.size());
  for (int a : face) out.proj[a] = ref[a] / mass;
  out.kl = -std::log(mass);
  return out;
}

}  // namespace entroflow
