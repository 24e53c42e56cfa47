// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "fastmetro/tensor.hpp"

namespace fastmetro {

template <typename Scalar>
class Tape;

using NodeId = std::size_t;

/// Handle to a tensor recorded on a Tape. Cheap to copy; valid while the
/// tape is alive.
template <typename Scalar>
class Var {
 public:
  using Tensor = DenseTensor<Scalar>;

  Var() = default;
  Var(Tape<Scalar>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const {
    if (!tape_) throw Error("use of an unbound Var");
    return *tape_;
  }
  NodeId id() const { return id_; }

  const Tensor& value() const { return tape().value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape().requires_grad(id_); }

  /// Gradient accumulated by the last backward pass (zeros if unreached).
  VecX<Scalar> grad() const { return tape().grad_or_zero(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  NodeId id_ = 0;
};

/// One executed primitive: which nodes it read and which node it produced.
struct OpRecord {
  std::string name;
  std::vector<NodeId> inputs;
  NodeId output = 0;
};

/// Reverse-mode recording of one forward pass.
///
/// Every primitive appends its output node plus a backward closure. Nodes
/// are either owned (intermediates, constants) or watched (external tensors
/// such as model parameters, referenced but never mutated). Gradients live
/// on the tape; callers read them back with grad(). Confined to one thread.
template <typename Scalar>
class Tape {
 public:
  using Tensor = DenseTensor<Scalar>;
  using Vector = VecX<Scalar>;
  using BackwardFn = std::function<void(Tape&, NodeId out)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<Scalar> constant(Tensor t) {
    check_finite(t, "constant");
    return add_owned(std::move(t), false);
  }

  /// Owned leaf that receives a gradient.
  Var<Scalar> variable(Tensor t) {
    check_finite(t, "variable");
    return add_owned(std::move(t), recording_);
  }

  /// Leaf referencing an external tensor, which must outlive the tape.
  Var<Scalar> watch(const Tensor& external) {
    check_finite(external, "watch");
    nodes_.push_back(Node{&external, recording_ && external.requires_grad(), Vector{}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  /// Appends the result of a primitive. `backward` runs only when some input
  /// requires a gradient.
  Var<Scalar> record(std::string name, Tensor out, std::initializer_list<Var<Scalar>> inputs,
                     BackwardFn backward) {
    return record(std::move(name), std::move(out), std::vector<Var<Scalar>>(inputs),
                  std::move(backward));
  }

  Var<Scalar> record(std::string name, Tensor out, const std::vector<Var<Scalar>>& inputs,
                     BackwardFn backward) {
    check_finite(out, name);
    bool needs = false;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (&v.tape() != this) throw Error(name + ": operands recorded on different tapes");
      ids.push_back(v.id());
      needs = needs || requires_grad(v.id());
    }
    Var<Scalar> result = add_owned(std::move(out), needs);
    if (needs) {
      ops_.push_back(Op{OpRecord{std::move(name), std::move(ids), result.id()}, std::move(backward)});
    }
    return result;
  }

  const Tensor& value(NodeId id) const { return *nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  /// Mutable gradient buffer of a node, allocated as zeros on first use.
  Vector& grad(NodeId id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value->size()) n.grad = Vector::Zero(n.value->size());
    return n.grad;
  }

  bool has_grad(NodeId id) const { return nodes_.at(id).grad.size() != 0; }

  Vector grad_or_zero(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.grad.size() ? n.grad : Vector::Zero(n.value->size());
  }

  /// Seeds d(root)/d(root) = 1 and replays the record in reverse. Returns the
  /// number of ops replayed.
  std::size_t backward(const Var<Scalar>& root) {
    if (&root.tape() != this) throw Error("backward: root belongs to another tape");
    if (root.value().size() != 1) {
      throw DimensionError("backward: root must be a scalar, got shape " + to_string(root.shape()));
    }
    if (!requires_grad(root.id())) return 0;
    grad(root.id()).setConstant(Scalar(1));
    std::size_t replayed = 0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      ++replayed;
      if (!has_grad(it->record.output)) continue;  // not on a path to root
      it->backward(*this, it->record.output);
    }
    for (const Node& n : nodes_) {
      if (n.grad.size() && !n.grad.allFinite()) throw NumericError("backward produced a non-finite gradient");
    }
    return replayed;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

  /// The computation record: executed primitives in forward order.
  std::vector<OpRecord> record_log() const {
    std::vector<OpRecord> out;
    out.reserve(ops_.size());
    for (const auto& op : ops_) out.push_back(op.record);
    return out;
  }

 private:
  struct Node {
    const Tensor* value;
    bool requires_grad;
    Vector grad;
  };
  struct Op {
    OpRecord record;
    BackwardFn backward;
  };

  Var<Scalar> add_owned(Tensor t, bool needs_grad) {
    storage_.push_back(std::move(t));
    nodes_.push_back(Node{&storage_.back(), needs_grad, Vector{}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  static void check_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError(where + ": non-finite value in tensor of shape " + to_string(t.shape()));
  }

  bool recording_;
  std::deque<Tensor> storage_;
  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace fastmetro
