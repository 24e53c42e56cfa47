// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives. Each op computes its value eagerly with Eigen
// and records a closure that maps the output gradient back onto its inputs.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fastmetro/tape.hpp"

namespace fastmetro {

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename Scalar>
void require_rank(const Var<Scalar>& x, Index rank, const char* op) {
  require(x.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " + to_string(x.shape()));
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}

/// Row-major matrix view of a node's gradient buffer (allocated on demand).
template <typename Scalar>
typename DenseTensor<Scalar>::MatrixMap grad_matrix(Tape<Scalar>& t, NodeId id) {
  const auto& v = t.value(id);
  return typename DenseTensor<Scalar>::MatrixMap(t.grad(id).data(), v.rows(), v.cols());
}

template <typename Scalar>
Eigen::Map<const RowMatX<Scalar>> out_grad_matrix(Tape<Scalar>& t, NodeId id) {
  const auto& v = t.value(id);
  return Eigen::Map<const RowMatX<Scalar>>(t.grad(id).data(), v.rows(), v.cols());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  DenseTensor<Scalar> out(a.shape(), a.value().values() + b.value().values());
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, NodeId o) {
    if (t.requires_grad(ia)) t.grad(ia) += t.grad(o);
    if (t.requires_grad(ib)) t.grad(ib) += t.grad(o);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  DenseTensor<Scalar> out(a.shape(), a.value().values() - b.value().values());
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, NodeId o) {
    if (t.requires_grad(ia)) t.grad(ia) += t.grad(o);
    if (t.requires_grad(ib)) t.grad(ib) -= t.grad(o);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  DenseTensor<Scalar> out(a.shape(), a.value().values().cwiseProduct(b.value().values()));
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, NodeId o) {
    if (t.requires_grad(ia)) t.grad(ia) += t.grad(o).cwiseProduct(t.value(ib).values());
    if (t.requires_grad(ib)) t.grad(ib) += t.grad(o).cwiseProduct(t.value(ia).values());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  DenseTensor<Scalar> out(x.shape(), x.value().values() * factor);
  const NodeId ix = x.id();
  return x.tape().record("scale", std::move(out), {x}, [ix, factor](Tape<Scalar>& t, NodeId o) {
    t.grad(ix) += t.grad(o) * factor;
  });
}

/// x * s for a one-element tensor s.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& x, const Var<Scalar>& s) {
  detail::require(s.value().size() == 1, "scale_by: factor must hold one value, got " + to_string(s.shape()));
  DenseTensor<Scalar> out(x.shape(), x.value().values() * s.value()[0]);
  const NodeId ix = x.id(), is = s.id();
  return x.tape().record("scale_by", std::move(out), {x, s}, [ix, is](Tape<Scalar>& t, NodeId o) {
    const auto& g = t.grad(o);
    if (t.requires_grad(ix)) t.grad(ix) += g * t.value(is)[0];
    if (t.requires_grad(is)) t.grad(is)[0] += g.dot(t.value(ix).values());
  });
}

/// x[..., d] + row[d], broadcast over every row of x.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& x, const Var<Scalar>& row) {
  detail::require(row.value().size() == x.value().cols(),
                  "add_row: row of shape " + to_string(row.shape()) + " does not match " + to_string(x.shape()));
  DenseTensor<Scalar> out(x.shape());
  out.matrix() = x.value().matrix().rowwise() + row.value().values().transpose();
  const NodeId ix = x.id(), ir = row.id();
  return x.tape().record("add_row", std::move(out), {x, row}, [ix, ir](Tape<Scalar>& t, NodeId o) {
    if (t.requires_grad(ix)) t.grad(ix) += t.grad(o);
    if (t.requires_grad(ir)) t.grad(ir) += detail::out_grad_matrix(t, o).colwise().sum().transpose();
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
Var<Scalar> operator*(Scalar factor, const Var<Scalar>& x) {
  return scale(x, factor);
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  DenseTensor<Scalar> out(x.shape(), x.value().values().cwiseMax(Scalar(0)));
  const NodeId ix = x.id();
  return x.tape().record("relu", std::move(out), {x}, [ix](Tape<Scalar>& t, NodeId o) {
    const auto& xv = t.value(ix).values();
    t.grad(ix).array() += (xv.array() > Scalar(0)).select(t.grad(o).array(), Scalar(0));
  });
}

/// log(1 + exp(x)), evaluated without overflow.
template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& x) {
  const auto& xv = x.value().values();
  DenseTensor<Scalar> out(x.shape());
  for (Index i = 0; i < xv.size(); ++i) {
    out[i] = std::max(xv[i], Scalar(0)) + std::log1p(std::exp(-std::abs(xv[i])));
  }
  const NodeId ix = x.id();
  return x.tape().record("softplus", std::move(out), {x}, [ix](Tape<Scalar>& t, NodeId o) {
    const auto& xv = t.value(ix).values();
    auto& gx = t.grad(ix);
    const auto& g = t.grad(o);
    for (Index i = 0; i < xv.size(); ++i) gx[i] += g[i] / (Scalar(1) + std::exp(-xv[i]));
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// y = x W + b over the trailing axis of x.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  detail::require_rank(weight, 2, "linear");
  detail::require_rank(bias, 1, "linear");
  const Index in = weight.shape()[0], out_dim = weight.shape()[1];
  detail::require(x.value().rank() >= 1 && x.value().cols() == in && bias.shape()[0] == out_dim,
                  "linear: x " + to_string(x.shape()) + ", weight " + to_string(weight.shape()) + ", bias " +
                      to_string(bias.shape()));
  Shape shape = x.shape();
  shape.back() = out_dim;
  DenseTensor<Scalar> out(shape);
  out.matrix().noalias() = x.value().matrix() * weight.value().matrix();
  out.matrix().rowwise() += bias.value().values().transpose();
  const NodeId ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record("linear", std::move(out), {x, weight, bias}, [ix, iw, ib](Tape<Scalar>& t, NodeId o) {
    const auto g = detail::out_grad_matrix(t, o);
    if (t.requires_grad(ix)) detail::grad_matrix(t, ix).noalias() += g * t.value(iw).matrix().transpose();
    if (t.requires_grad(iw)) detail::grad_matrix(t, iw).noalias() += t.value(ix).matrix().transpose() * g;
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum().transpose();
  });
}

/// Plain 2-D product a[n, k] b[k, m].
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  detail::require(a.shape()[1] == b.shape()[0],
                  "matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  DenseTensor<Scalar> out(Shape{a.shape()[0], b.shape()[1]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, NodeId o) {
    const auto g = detail::out_grad_matrix(t, o);
    if (t.requires_grad(ia)) detail::grad_matrix(t, ia).noalias() += g * t.value(ib).matrix().transpose();
    if (t.requires_grad(ib)) detail::grad_matrix(t, ib).noalias() += t.value(ia).matrix().transpose() * g;
  });
}

/// S x for a fixed sparse S and dense x[cols, d]. S is copied into the record.
template <typename Scalar>
Var<Scalar> sparse_matmul(const SparseRowMat<double>& s, const Var<Scalar>& x) {
  detail::require_rank(x, 2, "sparse_matmul");
  detail::require(s.cols() == x.shape()[0], "sparse_matmul: matrix is " + std::to_string(s.rows()) + "x" +
                                                std::to_string(s.cols()) + ", operand " + to_string(x.shape()));
  auto sc = std::make_shared<const SparseRowMat<Scalar>>(s.template cast<Scalar>());
  DenseTensor<Scalar> out(Shape{s.rows(), x.shape()[1]});
  out.matrix().noalias() = (*sc) * x.value().matrix();
  const NodeId ix = x.id();
  return x.tape().record("sparse_matmul", std::move(out), {x}, [ix, sc](Tape<Scalar>& t, NodeId o) {
    detail::grad_matrix(t, ix).noalias() += sc->transpose() * detail::out_grad_matrix(t, o);
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

/// Per-row standardization followed by an affine gain/shift.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& shift, Scalar eps) {
  const Index d = x.value().cols();
  detail::require(gain.value().size() == d && shift.value().size() == d,
                  "layer_norm: gain/shift must have " + std::to_string(d) + " entries");
  if (!(eps > Scalar(0))) throw ConfigError("layer_norm: eps must be positive");
  const auto xm = x.value().matrix();
  const Index n = xm.rows();
  // normalized rows and 1/sigma per row are kept for the backward pass
  auto xhat = std::make_shared<RowMatX<Scalar>>(n, d);
  auto inv_std = std::make_shared<VecX<Scalar>>(n);
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mean).square().mean();
    (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (xm.row(r).array() - mean) * (*inv_std)[r];
  }
  DenseTensor<Scalar> out(x.shape());
  out.matrix() = (xhat->array().rowwise() * gain.value().values().transpose().array()).rowwise() +
                 shift.value().values().transpose().array();
  const NodeId ix = x.id(), ig = gain.id(), is = shift.id();
  return x.tape().record("layer_norm", std::move(out), {x, gain, shift},
                         [ix, ig, is, xhat, inv_std](Tape<Scalar>& t, NodeId o) {
                           const auto g = detail::out_grad_matrix(t, o);
                           if (t.requires_grad(ig)) {
                             t.grad(ig) += g.cwiseProduct(*xhat).colwise().sum().transpose();
                           }
                           if (t.requires_grad(is)) t.grad(is) += g.colwise().sum().transpose();
                           if (!t.requires_grad(ix)) return;
                           const auto& gv = t.value(ig).values();
                           auto gx = detail::grad_matrix(t, ix);
                           const Index d = xhat->cols();
                           for (Index r = 0; r < xhat->rows(); ++r) {
                             const auto gh = (g.row(r).array() * gv.transpose().array()).matrix();
                             const Scalar mean_gh = gh.sum() / Scalar(d);
                             const Scalar mean_ghx = gh.cwiseProduct(xhat->row(r)).sum() / Scalar(d);
                             gx.row(r).array() +=
                                 (*inv_std)[r] * (gh.array() - mean_gh - xhat->row(r).array() * mean_ghx);
                           }
                         });
}

/// Additive penalty applied to disallowed scores before exponentiation.
template <typename Scalar>
inline constexpr Scalar kMaskPenalty = Scalar(1e9);

/// Row softmax over the last axis of scores[h, q, k].
///
/// `masks` is empty (no masking), a single (q, k) matrix shared by all
/// heads, or one matrix per head; true marks an allowed pair. Disallowed
/// entries come out as exactly 0 and pass no gradient.
template <typename Scalar>
Var<Scalar> masked_softmax(const Var<Scalar>& scores, std::span<const BoolMatrix> masks = {}) {
  detail::require_rank(scores, 3, "masked_softmax");
  const Index heads = scores.shape()[0], q = scores.shape()[1], k = scores.shape()[2];
  if (!masks.empty()) {
    detail::require(masks.size() == 1 || static_cast<Index>(masks.size()) == heads,
                    "masked_softmax: expected 1 or " + std::to_string(heads) + " masks, got " +
                        std::to_string(masks.size()));
    for (const auto& m : masks) {
      detail::require(m.rows() == q && m.cols() == k, "masked_softmax: mask is " + std::to_string(m.rows()) + "x" +
                                                          std::to_string(m.cols()) + ", scores " +
                                                          to_string(scores.shape()));
    }
  }
  const auto& sv = scores.value().values();
  DenseTensor<Scalar> out(scores.shape());
  VecX<Scalar> row(k);
  for (Index h = 0; h < heads; ++h) {
    const BoolMatrix* mask = masks.empty() ? nullptr : &masks[masks.size() == 1 ? 0 : static_cast<std::size_t>(h)];
    for (Index i = 0; i < q; ++i) {
      const Index base = (h * q + i) * k;
      row = sv.segment(base, k);
      if (mask) {
        if (!mask->row(i).any()) {
          throw ConfigError("masked_softmax: row " + std::to_string(i) + " of head " + std::to_string(h) +
                            " has no allowed entry");
        }
        for (Index j = 0; j < k; ++j) {
          if (!(*mask)(i, j)) row[j] -= kMaskPenalty<Scalar>;
        }
      }
      const Scalar peak = row.maxCoeff();
      row = (row.array() - peak).exp();
      row /= row.sum();
      if (mask) {
        for (Index j = 0; j < k; ++j) {
          if (!(*mask)(i, j)) row[j] = Scalar(0);
        }
      }
      out.values().segment(base, k) = row;
    }
  }
  const NodeId is = scores.id();
  return scores.tape().record("masked_softmax", std::move(out), {scores}, [is, k](Tape<Scalar>& t, NodeId o) {
    const auto& p = t.value(o).values();
    const auto& g = t.grad(o);
    auto& gs = t.grad(is);
    for (Index base = 0; base < p.size(); base += k) {
      const auto pr = p.segment(base, k);
      const Scalar dot = pr.dot(g.segment(base, k));
      gs.segment(base, k).array() += pr.array() * (g.segment(base, k).array() - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Multi-head attention kernels

/// Scaled dot products per head: out[h] = Q_h K_h^T / sqrt(d / heads), where
/// Q_h, K_h are the h-th column blocks of q[n, d] and k[m, d].
template <typename Scalar>
Var<Scalar> attention_scores(const Var<Scalar>& q, const Var<Scalar>& k, Index heads) {
  detail::require_rank(q, 2, "attention_scores");
  detail::require_rank(k, 2, "attention_scores");
  const Index n = q.shape()[0], m = k.shape()[0], d = q.shape()[1];
  detail::require(k.shape()[1] == d, "attention_scores: query/key widths differ");
  if (heads <= 0 || d % heads != 0) throw ConfigError("attention_scores: width not divisible by head count");
  const Index dh = d / heads;
  const Scalar inv = Scalar(1) / std::sqrt(Scalar(dh));
  DenseTensor<Scalar> out(Shape{heads, n, m});
  const auto qm = q.value().matrix();
  const auto km = k.value().matrix();
  for (Index h = 0; h < heads; ++h) {
    Eigen::Map<RowMatX<Scalar>> block(out.data() + h * n * m, n, m);
    block.noalias() = inv * qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose();
  }
  const NodeId iq = q.id(), ik = k.id();
  return q.tape().record("attention_scores", std::move(out), {q, k},
                         [iq, ik, heads, n, m, dh, inv](Tape<Scalar>& t, NodeId o) {
                           const auto& g = t.grad(o);
                           const auto qm = t.value(iq).matrix();
                           const auto km = t.value(ik).matrix();
                           const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik);
                           for (Index h = 0; h < heads; ++h) {
                             Eigen::Map<const RowMatX<Scalar>> gb(g.data() + h * n * m, n, m);
                             if (need_q) {
                               detail::grad_matrix(t, iq).middleCols(h * dh, dh).noalias() +=
                                   inv * gb * km.middleCols(h * dh, dh);
                             }
                             if (need_k) {
                               detail::grad_matrix(t, ik).middleCols(h * dh, dh).noalias() +=
                                   inv * gb.transpose() * qm.middleCols(h * dh, dh);
                             }
                           }
                         });
}

/// Weighted values per head, heads concatenated: out[:, h-block] = P_h V_h
/// for probabilities p[h, n, m] and values v[m, d].
template <typename Scalar>
Var<Scalar> attention_combine(const Var<Scalar>& p, const Var<Scalar>& v) {
  detail::require_rank(p, 3, "attention_combine");
  detail::require_rank(v, 2, "attention_combine");
  const Index heads = p.shape()[0], n = p.shape()[1], m = p.shape()[2], d = v.shape()[1];
  detail::require(v.shape()[0] == m, "attention_combine: " + to_string(p.shape()) + " vs values " +
                                         to_string(v.shape()));
  if (d % heads != 0) throw ConfigError("attention_combine: width not divisible by head count");
  const Index dh = d / heads;
  DenseTensor<Scalar> out(Shape{n, d});
  const auto vm = v.value().matrix();
  for (Index h = 0; h < heads; ++h) {
    Eigen::Map<const RowMatX<Scalar>> pb(p.value().data() + h * n * m, n, m);
    out.matrix().middleCols(h * dh, dh).noalias() = pb * vm.middleCols(h * dh, dh);
  }
  const NodeId ip = p.id(), iv = v.id();
  return p.tape().record("attention_combine", std::move(out), {p, v},
                         [ip, iv, heads, n, m, dh](Tape<Scalar>& t, NodeId o) {
                           const auto g = detail::out_grad_matrix(t, o);
                           const auto vm = t.value(iv).matrix();
                           const auto& pv = t.value(ip);
                           const bool need_p = t.requires_grad(ip), need_v = t.requires_grad(iv);
                           for (Index h = 0; h < heads; ++h) {
                             Eigen::Map<const RowMatX<Scalar>> pb(pv.data() + h * n * m, n, m);
                             if (need_p) {
                               Eigen::Map<RowMatX<Scalar>> gp(t.grad(ip).data() + h * n * m, n, m);
                               gp.noalias() += g.middleCols(h * dh, dh) * vm.middleCols(h * dh, dh).transpose();
                             }
                             if (need_v) {
                               detail::grad_matrix(t, iv).middleCols(h * dh, dh).noalias() +=
                                   pb.transpose() * g.middleCols(h * dh, dh);
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  detail::require(shape_size(shape) == x.value().size(),
                  "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  DenseTensor<Scalar> out(std::move(shape), x.value().values());
  const NodeId ix = x.id();
  return x.tape().record("reshape", std::move(out), {x},
                         [ix](Tape<Scalar>& t, NodeId o) { t.grad(ix) += t.grad(o); });
}

/// Stacks 2-D tensors with equal column counts along the first axis.
template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_rows: nothing to concatenate");
  const Index cols = parts.front().shape().back();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    detail::require(p.shape()[1] == cols, "concat_rows: column counts differ");
    rows += p.shape()[0];
  }
  DenseTensor<Scalar> out(Shape{rows, cols});
  std::vector<NodeId> ids;
  Index offset = 0;
  for (const auto& p : parts) {
    out.values().segment(offset * cols, p.value().size()) = p.value().values();
    offset += p.shape()[0];
    ids.push_back(p.id());
  }
  return parts.front().tape().record("concat_rows", std::move(out), parts, [ids](Tape<Scalar>& t, NodeId o) {
    const auto& g = t.grad(o);
    Index offset = 0;
    for (NodeId id : ids) {
      const Index len = t.value(id).size();
      if (t.requires_grad(id)) t.grad(id) += g.segment(offset, len);
      offset += len;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Index start, Index count) {
  detail::require_rank(x, 2, "slice_rows");
  const Index cols = x.shape()[1];
  detail::require(start >= 0 && count > 0 && start + count <= x.shape()[0],
                  "slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                      ") out of range for " + to_string(x.shape()));
  DenseTensor<Scalar> out(Shape{count, cols}, x.value().values().segment(start * cols, count * cols));
  const NodeId ix = x.id();
  return x.tape().record("slice_rows", std::move(out), {x}, [ix, start, cols](Tape<Scalar>& t, NodeId o) {
    const auto& g = t.grad(o);
    t.grad(ix).segment(start * cols, g.size()) += g;
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Index start, Index count) {
  detail::require_rank(x, 2, "slice_cols");
  detail::require(start >= 0 && count > 0 && start + count <= x.shape()[1],
                  "slice_cols: columns out of range for " + to_string(x.shape()));
  DenseTensor<Scalar> out(Shape{x.shape()[0], count});
  out.matrix() = x.value().matrix().middleCols(start, count);
  const NodeId ix = x.id();
  return x.tape().record("slice_cols", std::move(out), {x}, [ix, start, count](Tape<Scalar>& t, NodeId o) {
    detail::grad_matrix(t, ix).middleCols(start, count) += detail::out_grad_matrix(t, o);
  });
}

/// Splits image[H, W, C] into non-overlapping ph x pw patches, one flattened
/// patch per row in raster order; within a patch values run (dy, dx, c).
template <typename Scalar>
Var<Scalar> extract_patches(const Var<Scalar>& image, Index ph, Index pw) {
  detail::require_rank(image, 3, "extract_patches");
  const Index height = image.shape()[0], width = image.shape()[1], ch = image.shape()[2];
  if (ph <= 0 || pw <= 0 || height % ph != 0 || width % pw != 0) {
    throw ConfigError("extract_patches: image " + to_string(image.shape()) + " not divisible into " +
                      std::to_string(ph) + "x" + std::to_string(pw) + " patches");
  }
  const Index gh = height / ph, gw = width / pw, patch_len = ph * pw * ch;
  // gather index: out[i] = image[source[i]]
  auto source = std::make_shared<std::vector<Index>>();
  source->reserve(static_cast<std::size_t>(gh * gw * patch_len));
  for (Index gy = 0; gy < gh; ++gy)
    for (Index gx = 0; gx < gw; ++gx)
      for (Index dy = 0; dy < ph; ++dy)
        for (Index dx = 0; dx < pw; ++dx)
          for (Index c = 0; c < ch; ++c) source->push_back(((gy * ph + dy) * width + gx * pw + dx) * ch + c);
  DenseTensor<Scalar> out(Shape{gh * gw, patch_len});
  const auto& iv = image.value().values();
  for (std::size_t i = 0; i < source->size(); ++i) out[static_cast<Index>(i)] = iv[(*source)[i]];
  const NodeId ix = image.id();
  return image.tape().record("extract_patches", std::move(out), {image}, [ix, source](Tape<Scalar>& t, NodeId o) {
    const auto& g = t.grad(o);
    auto& gi = t.grad(ix);
    for (std::size_t i = 0; i < source->size(); ++i) gi[(*source)[i]] += g[static_cast<Index>(i)];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  auto out = DenseTensor<Scalar>::scalar(x.value().values().sum());
  const NodeId ix = x.id();
  return x.tape().record("sum", std::move(out), {x},
                         [ix](Tape<Scalar>& t, NodeId o) { t.grad(ix).array() += t.grad(o)[0]; });
}

/// (1/n) * sum_i ||a_i - b_i||_1 over the n rows of the first axis.
template <typename Scalar>
Var<Scalar> l1_mean(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "l1_mean");
  detail::require(a.value().rank() >= 1, "l1_mean: operands must have at least one axis");
  const Scalar inv_n = Scalar(1) / Scalar(a.shape()[0]);
  const VecX<Scalar> diff = a.value().values() - b.value().values();
  auto out = DenseTensor<Scalar>::scalar(diff.cwiseAbs().sum() * inv_n);
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("l1_mean", std::move(out), {a, b}, [ia, ib, inv_n](Tape<Scalar>& t, NodeId o) {
    const VecX<Scalar> diff = t.value(ia).values() - t.value(ib).values();
    const VecX<Scalar> g = diff.array().sign().matrix() * (t.grad(o)[0] * inv_n);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

}  // namespace fastmetro
