// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "fastmetro/eigen_types.hpp"
#include "fastmetro/errors.hpp"

namespace fastmetro {

template <typename Scalar>
struct Svd3 {
  Mat3<Scalar> u;
  Vec3<Scalar> singular_values;  // descending, non-negative
  Mat3<Scalar> v;
};

inline constexpr int kSvd3MaxSweeps = 100;

/// One-sided (Hestenes) Jacobi SVD of a 3x3 matrix: m = u diag(s) v^T.
///
/// Column pairs of a working copy are rotated until mutually orthogonal to
/// machine precision; the rotations accumulate into v, column norms are the
/// singular values. Columns of u belonging to numerically zero singular
/// values are completed to an orthonormal basis.
template <typename Scalar>
Svd3<Scalar> svd3(const Mat3<Scalar>& m) {
  if (!m.allFinite()) throw NumericError("svd3: non-finite input");
  constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
  Mat3<Scalar> a = m;
  Mat3<Scalar> v = Mat3<Scalar>::Identity();
  constexpr std::array<std::array<int, 2>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};

  bool converged = false;
  for (int sweep = 0; sweep < kSvd3MaxSweeps && !converged; ++sweep) {
    converged = true;
    for (const auto& [p, q] : pairs) {
      const Scalar alpha = a.col(p).squaredNorm();
      const Scalar beta = a.col(q).squaredNorm();
      const Scalar gamma = a.col(p).dot(a.col(q));
      if (std::abs(gamma) <= eps * std::sqrt(alpha) * std::sqrt(beta)) continue;
      converged = false;
      const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
      const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) / (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
      const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
      const Scalar s = c * t;
      for (Mat3<Scalar>* w : {&a, &v}) {
        const Vec3<Scalar> cp = w->col(p);
        w->col(p) = c * cp - s * w->col(q);
        w->col(q) = s * cp + c * w->col(q);
      }
    }
  }
  if (!converged) throw NumericError("svd3: Jacobi iteration did not converge within 100 sweeps");

  std::array<int, 3> order{0, 1, 2};
  Vec3<Scalar> norms(a.col(0).norm(), a.col(1).norm(), a.col(2).norm());
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

  Svd3<Scalar> out;
  for (int i = 0; i < 3; ++i) {
    out.singular_values[i] = norms[order[i]];
    out.v.col(i) = v.col(order[i]);
  }
  const Scalar tiny = out.singular_values[0] * eps * Scalar(8);
  int rank = 0;
  for (int i = 0; i < 3; ++i) {
    if (out.singular_values[i] > tiny && out.singular_values[i] > Scalar(0)) {
      out.u.col(i) = a.col(order[i]) / out.singular_values[i];
      rank = i + 1;
    }
  }
  // complete u for the null space
  for (int i = rank; i < 3; ++i) {
    if (i == 2) {
      out.u.col(2) = out.u.col(0).cross(out.u.col(1));
      continue;
    }
    Vec3<Scalar> best = Vec3<Scalar>::Zero();
    for (int e = 0; e < 3; ++e) {
      Vec3<Scalar> cand = Vec3<Scalar>::Unit(e);
      for (int j = 0; j < i; ++j) cand -= out.u.col(j).dot(cand) * out.u.col(j);
      if (cand.norm() > best.norm()) best = cand;
    }
    out.u.col(i) = best.normalized();
  }
  return out;
}

}  // namespace fastmetro
