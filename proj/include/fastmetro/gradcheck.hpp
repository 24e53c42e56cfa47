// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "fastmetro/parameters.hpp"
#include "fastmetro/tape.hpp"

namespace fastmetro {

/// Relative error used by all gradient checks: |a - b| / max(|a|, |b|, floor).
template <typename Scalar>
Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences with the given step; returns the largest
/// elementwise relative error.
template <typename Scalar>
Scalar finite_difference_check(const std::function<Var<Scalar>(const Var<Scalar>&)>& f,
                               const DenseTensor<Scalar>& x, Scalar step, Scalar floor = Scalar(1e-6)) {
  VecX<Scalar> analytic;
  {
    Tape<Scalar> tape;
    Var<Scalar> input = tape.variable(x);
    tape.backward(f(input));
    analytic = input.grad();
  }
  auto evaluate = [&](const DenseTensor<Scalar>& point) {
    Tape<Scalar> tape(false);
    return f(tape.constant(point)).value().item();
  };
  Scalar worst = 0;
  DenseTensor<Scalar> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = x[i];
    probe[i] = orig + step;
    const Scalar up = evaluate(probe);
    probe[i] = orig - step;
    const Scalar down = evaluate(probe);
    probe[i] = orig;
    const Scalar numeric = (up - down) / (Scalar(2) * step);
    worst = std::max(worst, relative_error(analytic[i], numeric, floor));
  }
  return worst;
}

struct GradientCheckReport {
  double worst_error = 0;
  std::string worst_entry;
  Index probes = 0;
  // entries whose analytic gradient is zero up to accumulation roundoff
  Index zero_probes = 0;
  // largest |numeric| / roundoff bound over the zero entries; <= 1 passes
  double worst_zero_ratio = 0;
  Index tensors = 0;
};

/// Central-difference check of the gradients already stored in `store`
/// against `loss()`, probing up to `per_tensor` entries of every tensor
/// (all of them for small tensors).
///
/// Relative error is meaningless where the true gradient vanishes
/// identically, so entries with |analytic| <= 64 eps |L| are instead required
/// to have |numeric| <= 1e3 eps |L| / step, the roundoff level of the
/// difference quotient.
template <typename Scalar, typename LossFn>
GradientCheckReport check_parameter_gradients(ParameterStore<Scalar>& store, LossFn&& loss, Index per_tensor,
                                              std::mt19937_64& rng, Scalar step = Scalar(1e-5),
                                              Scalar floor = Scalar(1e-6)) {
  GradientCheckReport report;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar level = std::max(Scalar(1), std::abs(static_cast<Scalar>(loss())));
  const Scalar zero_tol = Scalar(64) * eps * level;
  const Scalar noise = Scalar(1000) * eps * level / step;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& t = store.at(p);
    std::vector<Index> picks;
    if (t.size() <= per_tensor) {
      for (Index i = 0; i < t.size(); ++i) picks.push_back(i);
    } else {
      std::uniform_int_distribution<Index> pick(0, t.size() - 1);
      for (Index i = 0; i < per_tensor; ++i) picks.push_back(pick(rng));
    }
    ++report.tensors;
    for (Index i : picks) {
      const Scalar analytic = t.grad().size() ? t.grad()[i] : Scalar(0);
      const Scalar orig = t[i];
      t[i] = orig + step;
      const Scalar up = loss();
      t[i] = orig - step;
      const Scalar down = loss();
      t[i] = orig;
      const Scalar numeric = (up - down) / (Scalar(2) * step);
      ++report.probes;
      if (std::abs(analytic) <= zero_tol) {
        ++report.zero_probes;
        report.worst_zero_ratio = std::max(report.worst_zero_ratio, static_cast<double>(std::abs(numeric) / noise));
        continue;
      }
      const double err = static_cast<double>(relative_error(analytic, numeric, floor));
      if (err >= report.worst_error) {
        report.worst_error = err;
        report.worst_entry = store.name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace fastmetro
