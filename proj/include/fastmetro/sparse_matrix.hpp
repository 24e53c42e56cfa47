// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "fastmetro/eigen_types.hpp"
#include "fastmetro/ops.hpp"

namespace fastmetro {

struct Triplet {
  Index row = 0;
  Index col = 0;
  double value = 0.0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Immutable coordinate-list sparse matrix with an Eigen compressed mirror.
///
/// Entries are kept sorted row-major; duplicate coordinates and
/// out-of-range indices are rejected at construction.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(Index rows, Index cols, std::vector<Triplet> entries);

  static SparseMatrix identity(Index n);
  static SparseMatrix from_eigen(const SparseRowMat<double>& m);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index nnz() const { return static_cast<Index>(entries_.size()); }
  const std::vector<Triplet>& entries() const { return entries_; }
  const SparseRowMat<double>& eigen() const { return eigen_; }

  double coeff(Index row, Index col) const;
  RowMatX<double> to_dense() const;
  bool is_symmetric() const;
  SparseMatrix transposed() const;

  /// Throws DataError naming the first row whose values do not sum to 1.
  void check_row_sums(double tolerance = 1e-9) const;

  /// Sparse-sparse product, used to chain upsampling levels.
  friend SparseMatrix operator*(const SparseMatrix& a, const SparseMatrix& b);
  friend bool operator==(const SparseMatrix& a, const SparseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.entries_ == b.entries_;
  }

  /// Dense product S x for a matrix with cols() rows.
  template <typename Derived>
  RowMatX<typename Derived::Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    using Scalar = typename Derived::Scalar;
    if (x.rows() != cols_) throw DimensionError("SparseMatrix::apply: operand has wrong row count");
    RowMatX<Scalar> out = eigen_.template cast<Scalar>() * x;
    return out;
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Triplet> entries_;
  SparseRowMat<double> eigen_;
};

/// Differentiable S x on a tape.
template <typename Scalar>
Var<Scalar> sparse_dense_matmul(const SparseMatrix& s, const Var<Scalar>& x) {
  return sparse_matmul(s.eigen(), x);
}

enum class MatrixKind {
  general,
  upsampling,  // rows are barycentric weights summing to 1
};

/// Writes the coordinate text format: "rows cols nnz" then one
/// "row col value" line per entry, zero-based, values in shortest
/// round-trip decimal form.
void save_matrix(const std::filesystem::path& path, const SparseMatrix& m);

/// Reads and validates a coordinate text file. `expected_shape`, when set,
/// must match the header.
SparseMatrix load_matrix(const std::filesystem::path& path,
                         std::optional<std::pair<Index, Index>> expected_shape = std::nullopt,
                         MatrixKind kind = MatrixKind::general);

}  // namespace fastmetro
