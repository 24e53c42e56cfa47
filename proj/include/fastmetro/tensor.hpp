// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fastmetro/eigen_types.hpp"
#include "fastmetro/errors.hpp"

namespace fastmetro {

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

/// Row-major n-dimensional array of reals with an optional gradient buffer.
///
/// Rank 0 is a scalar. The trailing axis is the "feature" axis: matrix()
/// views the tensor as (size / last) x last, which is how every per-row
/// operation (linear maps, normalization, L1 losses) addresses its rows.
template <typename Scalar>
class DenseTensor {
 public:
  using Vector = VecX<Scalar>;
  using MatrixMap = Eigen::Map<RowMatX<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatX<Scalar>>;

  DenseTensor() : values_(Vector::Zero(1)) {}

  explicit DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    values_ = Vector::Zero(shape_size(shape_));
  }

  DenseTensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (shape_size(shape_) != values_.size()) {
      throw DimensionError("tensor shape " + to_string(shape_) + " does not hold " +
                           std::to_string(values_.size()) + " values");
    }
  }

  static DenseTensor scalar(Scalar value) {
    DenseTensor t;
    t.values_[0] = value;
    return t;
  }

  static DenseTensor filled(Shape shape, Scalar value) {
    DenseTensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  template <typename Derived>
  static DenseTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    DenseTensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m.template cast<Scalar>();
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return values_.size(); }

  /// Extent along `axis`; negative axes count from the back.
  Index dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
      throw DimensionError("axis out of range for shape " + to_string(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
  }

  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return size() / cols(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return values_[0];
  }

  DenseTensor reshaped(Shape shape) const { return DenseTensor(std::move(shape), values_); }

  bool requires_grad() const { return requires_grad_; }

  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && grad_.size() != values_.size()) grad_ = Vector::Zero(values_.size());
    if (!on) grad_.resize(0);
  }

  Vector& grad() { return grad_; }
  const Vector& grad() const { return grad_; }

  void zero_grad() {
    if (requires_grad_) grad_.setZero(values_.size());
  }

  bool all_finite() const { return values_.allFinite(); }

  template <typename To>
  DenseTensor<To> cast() const {
    return DenseTensor<To>(shape_, values_.template cast<To>());
  }

 private:
  void check_extents() const {
    for (Index e : shape_) {
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
    }
  }

  Shape shape_;
  Vector values_;
  bool requires_grad_ = false;
  Vector grad_;
};

}  // namespace fastmetro
