// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fastmetro/config.hpp"
#include "fastmetro/model.hpp"
#include "fastmetro/ops.hpp"

namespace fastmetro {

/// Targets for one sample.
template <typename Scalar>
struct GroundTruth {
  RowMatX<Scalar> vertices3d;  // [M, 3]
  RowMatX<Scalar> joints3d;    // [K, 3]
  RowMatX<Scalar> joints2d;    // [K, 2]
};

template <typename Scalar>
Var<Scalar> loss_vertex(const Var<Scalar>& pred_fine, const Var<Scalar>& gt) {
  return l1_mean(pred_fine, gt);
}

/// Both joint branches against the same target, each normalized by K.
template <typename Scalar>
Var<Scalar> loss_joint(const Var<Scalar>& pred, const Var<Scalar>& regressed, const Var<Scalar>& gt) {
  return l1_mean(pred, gt) + l1_mean(regressed, gt);
}

template <typename Scalar>
Var<Scalar> loss_joint2d(const Var<Scalar>& pred, const Var<Scalar>& regressed, const Var<Scalar>& gt) {
  return l1_mean(pred, gt) + l1_mean(regressed, gt);
}

/// Weighted sum of loss parts on plain numbers. Throws ConfigError on a
/// negative coefficient.
inline double total_loss(double vertex, double joint, double joint2d, const LossWeights& w) {
  w.validate();
  double total = 0.0;
  if (w.has_3d) total += w.lambda_vertex3d * vertex + w.lambda_joint3d * joint;
  if (w.has_2d) total += w.lambda_joint2d * joint2d;
  return total;
}

/// Same on the tape. Disabled terms are left out of the graph entirely.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& vertex, const Var<Scalar>& joint, const Var<Scalar>& joint2d,
                       const LossWeights& w) {
  w.validate();
  std::vector<Var<Scalar>> terms;
  if (w.has_3d) {
    terms.push_back(scale(vertex, static_cast<Scalar>(w.lambda_vertex3d)));
    terms.push_back(scale(joint, static_cast<Scalar>(w.lambda_joint3d)));
  }
  if (w.has_2d) terms.push_back(scale(joint2d, static_cast<Scalar>(w.lambda_joint2d)));
  if (terms.empty()) return vertex.tape().constant(DenseTensor<Scalar>::scalar(Scalar(0)));
  Var<Scalar> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
  return total;
}

template <typename Scalar>
struct LossParts {
  Var<Scalar> vertex, joint, joint2d, total;
};

/// All loss terms of one model output against its targets.
template <typename Scalar>
LossParts<Scalar> compute_losses(const ModelOutput<Scalar>& out, const GroundTruth<Scalar>& gt,
                                 const LossWeights& w) {
  Tape<Scalar>& tape = out.joints3d.tape();
  auto target = [&](const RowMatX<Scalar>& m) { return tape.constant(DenseTensor<Scalar>::from_matrix(m)); };
  LossParts<Scalar> parts;
  parts.vertex = loss_vertex(out.fine_vertices3d, target(gt.vertices3d));
  const Var<Scalar> j3 = target(gt.joints3d);
  parts.joint = loss_joint(out.joints3d, out.regressed_joints3d, j3);
  const Var<Scalar> j2 = target(gt.joints2d);
  parts.joint2d = loss_joint2d(out.joints2d, out.regressed_joints2d, j2);
  parts.total = total_loss(parts.vertex, parts.joint, parts.joint2d, w);
  return parts;
}

}  // namespace fastmetro
