// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fastmetro/eigen_types.hpp"
#include "fastmetro/sparse_matrix.hpp"

namespace fastmetro {

using Face = std::array<Index, 3>;
using Edge = std::pair<Index, Index>;  // first < second

/// Triangle mesh: vertex count, index triples and optional rest positions.
class TriangleMesh {
 public:
  TriangleMesh() = default;
  /// Throws DataError on out-of-range or repeated indices within a face.
  TriangleMesh(Index vertex_count, std::vector<Face> faces, std::optional<Points3<double>> positions = std::nullopt);

  Index vertex_count() const { return vertex_count_; }
  const std::vector<Face>& faces() const { return faces_; }
  Index face_count() const { return static_cast<Index>(faces_.size()); }
  bool has_positions() const { return positions_.has_value(); }
  const Points3<double>& positions() const;

  /// Unique undirected edges, sorted.
  std::vector<Edge> edges() const;

  /// Length of the diagonal of the axis-aligned bounding box of the rest pose.
  double bounding_box_diagonal() const;

 private:
  Index vertex_count_ = 0;
  std::vector<Face> faces_;
  std::optional<Points3<double>> positions_;
};

/// Symmetric 0/1 matrix with (i, j) = 1 iff i != j share a face.
SparseMatrix build_adjacency(const TriangleMesh& mesh);

struct Subdivision {
  TriangleMesh fine;
  SparseMatrix upsample;  // fine.vertex_count x coarse.vertex_count
};

/// One level of midpoint subdivision. Original vertices keep their indices;
/// edge e (in edges() order) becomes vertex N + e. Each face splits into four.
Subdivision subdivide(const TriangleMesh& mesh);

/// Boolean (K + N)^2 mask over [joints; vertices] tokens for decoder
/// self-attention: joints attend and are attended freely, vertex pairs only
/// along mesh edges, every token to itself.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(BoolMatrix allowed, Index joints, std::vector<Index> unmasked_heads);

  Index size() const { return allowed_.rows(); }
  Index joints() const { return joints_; }
  const BoolMatrix& allowed() const { return allowed_; }

  /// Heads that ignore the mask (all pairs allowed).
  const std::vector<Index>& unmasked_heads() const { return unmasked_heads_; }
  bool head_masked(Index head) const;

  /// Number of disallowed entries.
  Index masked_count() const;

  /// One matrix per head, in the form masked_softmax consumes.
  std::vector<BoolMatrix> per_head(Index num_heads) const;

 private:
  BoolMatrix allowed_;
  Index joints_ = 0;
  std::vector<Index> unmasked_heads_;
};

/// With `half_heads`, heads [0, num_heads / 2) apply the mask and the rest
/// attend freely. Throws DataError if the adjacency is not symmetric.
AttentionMask build_attention_mask(const SparseMatrix& adjacency, Index joints, bool half_heads, Index num_heads);

/// Picks `count` well-spread vertices by farthest-point sampling from vertex 0.
std::vector<Index> farthest_point_anchors(const TriangleMesh& mesh, Index count);

/// K x V regressor: joint k is the uniform mean of anchor k and its one-ring.
SparseMatrix one_ring_regressor(const TriangleMesh& mesh, std::span<const Index> anchors);

/// Sparse operators the model is built against: coarse adjacency (N x N),
/// upsampling U (M x N) and joint regressor R (K x M).
struct MeshTopology {
  SparseMatrix adjacency;
  SparseMatrix upsample;
  SparseMatrix regressor;

  Index joints() const { return regressor.rows(); }
  Index coarse_vertices() const { return adjacency.rows(); }
  Index fine_vertices() const { return upsample.rows(); }

  /// Subdivides `coarse` once and regresses `joints` joints from one-rings
  /// around farthest-point anchors of the fine mesh.
  static MeshTopology from_mesh(const TriangleMesh& coarse, Index joints);

  /// Throws DataError unless U is M x N, R is K x M and the adjacency is N x N
  /// and symmetric.
  void validate() const;
};

/// OBJ subset: "v x y z" and triangular "f a b c" records with 1-based
/// indices ("a/b/c" forms use the first index). Other records are ignored.
TriangleMesh load_obj(const std::filesystem::path& path);
void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// ASCII PLY 1.0 with vertices and (optional) triangle faces.
void save_ply(const std::filesystem::path& path, const Points3<double>& vertices, std::span<const Face> faces);

/// Regular tetrahedron centred at the origin with circumradius `radius`.
TriangleMesh make_tetrahedron(double radius = 1.0);

/// Two triangles (0,1,2) and (1,3,2) sharing edge 1-2; vertices 0 and 3 are
/// not adjacent.
TriangleMesh make_two_triangles();

}  // namespace fastmetro
