// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/sparse_matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "fastmetro/format.hpp"

namespace fastmetro {

namespace {

std::string coord(Index r, Index c) { return "(" + std::to_string(r) + ", " + std::to_string(c) + ")"; }

}  // namespace

SparseMatrix::SparseMatrix(Index rows, Index cols, std::vector<Triplet> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (rows <= 0 || cols <= 0) throw DataError("sparse matrix extents must be positive");
  std::sort(entries_.begin(), entries_.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Triplet& t = entries_[i];
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw DataError("sparse matrix entry " + coord(t.row, t.col) + " outside " + std::to_string(rows) + "x" +
                      std::to_string(cols));
    }
    if (!std::isfinite(t.value)) throw DataError("sparse matrix entry " + coord(t.row, t.col) + " is not finite");
    if (i > 0 && entries_[i - 1].row == t.row && entries_[i - 1].col == t.col) {
      throw DataError("duplicate sparse matrix coordinate " + coord(t.row, t.col));
    }
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(entries_.size());
  for (const Triplet& t : entries_) trips.emplace_back(t.row, t.col, t.value);
  eigen_.resize(rows, cols);
  eigen_.setFromTriplets(trips.begin(), trips.end());
}

SparseMatrix SparseMatrix::identity(Index n) {
  std::vector<Triplet> e;
  e.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) e.push_back({i, i, 1.0});
  return SparseMatrix(n, n, std::move(e));
}

SparseMatrix SparseMatrix::from_eigen(const SparseRowMat<double>& m) {
  std::vector<Triplet> e;
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseRowMat<double>::InnerIterator it(m, r); it; ++it) e.push_back({it.row(), it.col(), it.value()});
  }
  return SparseMatrix(m.rows(), m.cols(), std::move(e));
}

double SparseMatrix::coeff(Index row, Index col) const { return eigen_.coeff(row, col); }

RowMatX<double> SparseMatrix::to_dense() const { return RowMatX<double>(eigen_); }

bool SparseMatrix::is_symmetric() const {
  if (rows_ != cols_) return false;
  for (const Triplet& t : entries_) {
    if (eigen_.coeff(t.col, t.row) != t.value) return false;
  }
  return true;
}

SparseMatrix SparseMatrix::transposed() const {
  std::vector<Triplet> e;
  e.reserve(entries_.size());
  for (const Triplet& t : entries_) e.push_back({t.col, t.row, t.value});
  return SparseMatrix(cols_, rows_, std::move(e));
}

void SparseMatrix::check_row_sums(double tolerance) const {
  std::vector<double> sums(static_cast<std::size_t>(rows_), 0.0);
  for (const Triplet& t : entries_) sums[static_cast<std::size_t>(t.row)] += t.value;
  for (Index r = 0; r < rows_; ++r) {
    if (std::abs(sums[static_cast<std::size_t>(r)] - 1.0) > tolerance) {
      throw DataError("row " + std::to_string(r) + " sums to " + std::to_string(sums[static_cast<std::size_t>(r)]) +
                      ", expected 1");
    }
  }
}

SparseMatrix operator*(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("sparse product: inner extents differ");
  SparseRowMat<double> p = (a.eigen() * b.eigen()).pruned();
  return SparseMatrix::from_eigen(p);
}

void save_matrix(const std::filesystem::path& path, const SparseMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << m.rows() << ' ' << m.cols() << ' ' << m.nnz() << '\n';
  for (const Triplet& t : m.entries()) out << t.row << ' ' << t.col << ' ' << format_double(t.value) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

SparseMatrix load_matrix(const std::filesystem::path& path, std::optional<std::pair<Index, Index>> expected_shape,
                         MatrixKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open matrix file " + path.string());
  const std::string where = path.string();
  std::string line;
  auto next_line = [&](std::size_t& lineno) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') throw DataError(where + ":" + std::to_string(lineno) + ": CRLF line ending");
      if (!line.empty()) return true;
    }
    return false;
  };
  std::size_t lineno = 0;
  if (!next_line(lineno)) throw DataError(where + ": empty matrix file");
  Index rows = 0, cols = 0, nnz = 0;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> rows >> cols >> nnz) || (hs >> extra) || rows <= 0 || cols <= 0 || nnz < 0) {
      throw DataError(where + ":" + std::to_string(lineno) + ": malformed header, expected 'rows cols nnz'");
    }
  }
  if (expected_shape && (expected_shape->first != rows || expected_shape->second != cols)) {
    throw DataError(where + ": matrix is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                    std::to_string(expected_shape->first) + "x" + std::to_string(expected_shape->second));
  }
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(nnz));
  for (Index k = 0; k < nnz; ++k) {
    if (!next_line(lineno)) {
      throw DataError(where + ": expected " + std::to_string(nnz) + " entries, found " + std::to_string(k));
    }
    std::istringstream ls(line);
    Triplet t;
    std::string value_text, extra;
    if (!(ls >> t.row >> t.col >> value_text) || (ls >> extra)) {
      throw DataError(where + ":" + std::to_string(lineno) + ": malformed entry '" + line + "'");
    }
    auto res = std::from_chars(value_text.data(), value_text.data() + value_text.size(), t.value);
    if (res.ec != std::errc{} || res.ptr != value_text.data() + value_text.size()) {
      throw DataError(where + ":" + std::to_string(lineno) + ": bad value '" + value_text + "'");
    }
    entries.push_back(t);
  }
  if (next_line(lineno)) throw DataError(where + ":" + std::to_string(lineno) + ": trailing data after entries");
  SparseMatrix m = [&] {
    try {
      return SparseMatrix(rows, cols, std::move(entries));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }();
  if (kind == MatrixKind::upsampling) {
    try {
      m.check_row_sums();
    } catch (const DataError& e) {
      throw DataError(where + ": upsampling " + e.what());
    }
  }
  return m;
}

}  // namespace fastmetro
