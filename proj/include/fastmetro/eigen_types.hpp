// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace fastmetro {

using Index = Eigen::Index;

template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using RowMatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

// N x 3 point sets, one point per row.
template <typename T>
using Points3 = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using SparseRowMat = Eigen::SparseMatrix<T, Eigen::RowMajor>;

}  // namespace fastmetro
