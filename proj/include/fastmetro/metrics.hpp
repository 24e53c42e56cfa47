// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fastmetro/errors.hpp"
#include "fastmetro/svd3.hpp"

namespace fastmetro {

/// Similarity s R p + t (det R = +1, s >= 0) minimizing the squared distance
/// between the rows of `pred` and `gt`, applied to `pred`.
/// Throws NumericError if `gt` has zero spread.
template <typename Scalar>
RowMatX<Scalar> procrustes_align(const RowMatX<Scalar>& pred, const RowMatX<Scalar>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3) {
    throw DimensionError("procrustes_align: shapes differ or are not n x 3");
  }
  if (pred.rows() < 3) throw DimensionError("procrustes_align: need at least 3 points");
  const Eigen::Matrix<Scalar, 1, 3> mu_p = pred.colwise().mean();
  const Eigen::Matrix<Scalar, 1, 3> mu_g = gt.colwise().mean();
  const RowMatX<Scalar> p0 = pred.rowwise() - mu_p;
  const RowMatX<Scalar> g0 = gt.rowwise() - mu_g;
  if (g0.squaredNorm() == Scalar(0)) throw NumericError("procrustes_align: target points all coincide");
  const Scalar var_p = p0.squaredNorm();
  if (var_p == Scalar(0)) return gt.colwise().mean().replicate(gt.rows(), 1);

  const Mat3<Scalar> cov = g0.transpose() * p0;
  const Svd3<Scalar> svd = svd3(cov);
  Vec3<Scalar> d = Vec3<Scalar>::Ones();
  if (svd.u.determinant() * svd.v.determinant() < Scalar(0)) d(2) = Scalar(-1);
  const Mat3<Scalar> rot = svd.u * d.asDiagonal() * svd.v.transpose();
  const Scalar s = svd.singular_values.dot(d) / var_p;
  const Eigen::Matrix<Scalar, 1, 3> t = mu_g - s * mu_p * rot.transpose();
  return ((s * pred * rot.transpose()).rowwise() + t).eval();
}

/// Mean Euclidean distance between corresponding rows.
template <typename Scalar>
Scalar mean_point_error(const RowMatX<Scalar>& pred, const RowMatX<Scalar>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.rows() == 0) {
    throw DimensionError("point error: shapes " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                         " and " + std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()) + " differ");
  }
  return (pred - gt).rowwise().norm().mean();
}

template <typename Scalar>
Scalar mpjpe(const RowMatX<Scalar>& pred, const RowMatX<Scalar>& gt) {
  return mean_point_error(pred, gt);
}

template <typename Scalar>
Scalar pa_mpjpe(const RowMatX<Scalar>& pred, const RowMatX<Scalar>& gt) {
  return mean_point_error(procrustes_align(pred, gt), gt);
}

template <typename Scalar>
Scalar mpvpe(const RowMatX<Scalar>& pred, const RowMatX<Scalar>& gt) {
  return mean_point_error(pred, gt);
}

struct SampleMetrics {
  Index sample_id = 0;
  double mpjpe = 0;
  double pa_mpjpe = 0;
  double mpvpe = 0;
};

/// Component-wise mean over samples.
SampleMetrics mean_metrics(const std::vector<SampleMetrics>& rows);

/// CSV with header sample_id,mpjpe,pa_mpjpe,mpvpe.
void write_eval_report(const std::filesystem::path& path, const std::vector<SampleMetrics>& rows);

}  // namespace fastmetro
