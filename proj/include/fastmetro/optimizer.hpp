// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "fastmetro/config.hpp"
#include "fastmetro/errors.hpp"
#include "fastmetro/parameters.hpp"

namespace fastmetro {

/// Global L2 norm over the grad buffers of every parameter.
template <typename Scalar>
Scalar global_grad_norm(const ParameterStore<Scalar>& store) {
  Scalar sq = 0;
  for (std::size_t i = 0; i < store.size(); ++i) sq += store.at(i).grad().squaredNorm();
  return std::sqrt(sq);
}

/// Rescales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename Scalar>
Scalar clip_gradients(ParameterStore<Scalar>& store, Scalar max_norm) {
  if (!(max_norm > Scalar(0))) throw ConfigError("clip_gradients: max_norm must be positive");
  const Scalar norm = global_grad_norm(store);
  if (norm > max_norm) {
    const Scalar factor = max_norm / norm;
    for (std::size_t i = 0; i < store.size(); ++i) store.at(i).grad() *= factor;
  }
  return norm;
}

/// Adam with decoupled weight decay. Each step first shrinks the weights by
/// lr * weight_decay, then applies the bias-corrected moment update.
template <typename Scalar>
class AdamW {
 public:
  struct State {
    Index step = 0;
    std::vector<VecX<Scalar>> m, v;
  };

  AdamW(const TrainConfig& config, const ParameterStore<Scalar>& store) : config_(config) {
    config_.validate();
    for (std::size_t i = 0; i < store.size(); ++i) {
      state_.m.push_back(VecX<Scalar>::Zero(store.at(i).size()));
      state_.v.push_back(VecX<Scalar>::Zero(store.at(i).size()));
    }
  }

  const State& state() const { return state_; }
  State& state() { return state_; }
  const TrainConfig& config() const { return config_; }

  /// Updates every parameter from its grad buffer. A non-finite gradient
  /// throws TrainingError before anything is modified.
  void step(ParameterStore<Scalar>& store) {
    if (store.size() != state_.m.size()) throw TrainingError("optimizer state does not match the parameters");
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& t = store.at(i);
      if (t.grad().size() != t.size()) throw TrainingError("parameter " + store.name(i) + " has no gradient buffer");
      if (!t.grad().allFinite()) throw TrainingError("non-finite gradient in " + store.name(i) + "; step aborted");
    }
    ++state_.step;
    const Scalar lr = static_cast<Scalar>(config_.learning_rate);
    const Scalar wd = static_cast<Scalar>(config_.weight_decay);
    const Scalar b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
    const Scalar eps = static_cast<Scalar>(config_.adam_eps);
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state_.step));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state_.step));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& t = store.at(i);
      auto& p = t.values();
      const auto& g = t.grad();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      p -= (lr * wd) * p;
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
  }

 private:
  TrainConfig config_;
  State state_;
};

}  // namespace fastmetro
