// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fastmetro/errors.hpp"
#include "fastmetro/tape.hpp"

namespace fastmetro {

using ParamId = std::size_t;

/// Named, ordered collection of learnable tensors. Tensor addresses are
/// stable, so tapes may watch them directly.
template <typename Scalar>
class ParameterStore {
 public:
  using Tensor = DenseTensor<Scalar>;

  ParamId add(std::string name, Shape shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Tensor t(std::move(shape));
    t.set_requires_grad(true);
    tensors_.push_back(std::move(t));
    names_.push_back(name);
    index_.emplace(std::move(name), names_.size() - 1);
    return names_.size() - 1;
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  Tensor& at(ParamId id) { return tensors_.at(id); }
  const Tensor& at(ParamId id) const { return tensors_.at(id); }

  std::optional<ParamId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  Tensor& at(std::string_view name) { return tensors_.at(require(name)); }
  const Tensor& at(std::string_view name) const { return tensors_.at(require(name)); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  /// Same names and shapes in the same order.
  bool same_layout(const ParameterStore& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    }
    return true;
  }

 private:
  ParamId require(std::string_view name) const {
    auto id = find(name);
    if (!id) throw ConfigError("no parameter named '" + std::string(name) + "'");
    return *id;
  }

  std::vector<std::string> names_;
  std::deque<Tensor> tensors_;
  std::map<std::string, ParamId> index_;
};

/// Binds a parameter store to one tape: each parameter is watched on first
/// use and reused afterwards.
template <typename Scalar>
class ForwardContext {
 public:
  ForwardContext(const ParameterStore<Scalar>& store, Tape<Scalar>& tape)
      : store_(&store), tape_(&tape), vars_(store.size()) {}

  Tape<Scalar>& tape() const { return *tape_; }

  Var<Scalar> operator()(ParamId id) {
    auto& slot = vars_.at(id);
    if (!slot) slot = tape_->watch(store_->at(id));
    return *slot;
  }

  Var<Scalar> constant(DenseTensor<Scalar> t) { return tape_->constant(std::move(t)); }

  /// Adds factor * d(root)/d(param) into each parameter's grad buffer after
  /// the tape's backward pass.
  void accumulate_gradients(ParameterStore<Scalar>& store, Scalar factor = Scalar(1)) const {
    if (&store != store_) throw Error("accumulate_gradients: store does not match the context");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (!vars_[i] || !tape_->has_grad(vars_[i]->id())) continue;
      auto& t = store.at(i);
      if (t.grad().size() != t.size()) t.set_requires_grad(true);
      t.grad() += factor * tape_->grad(vars_[i]->id());
    }
  }

 private:
  const ParameterStore<Scalar>* store_;
  Tape<Scalar>* tape_;
  std::vector<std::optional<Var<Scalar>>> vars_;
};

}  // namespace fastmetro
