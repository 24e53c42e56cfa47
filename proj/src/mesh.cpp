// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "fastmetro/format.hpp"

namespace fastmetro {

TriangleMesh::TriangleMesh(Index vertex_count, std::vector<Face> faces, std::optional<Points3<double>> positions)
    : vertex_count_(vertex_count), faces_(std::move(faces)), positions_(std::move(positions)) {
  if (vertex_count <= 0) throw DataError("mesh must have at least one vertex");
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& face = faces_[f];
    for (Index v : face) {
      if (v < 0 || v >= vertex_count) {
        throw DataError("face " + std::to_string(f) + " references vertex " + std::to_string(v) + " of " +
                        std::to_string(vertex_count));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw DataError("face " + std::to_string(f) + " is degenerate (repeated vertex)");
    }
  }
  if (positions_) {
    if (positions_->rows() != vertex_count) {
      throw DataError("mesh has " + std::to_string(vertex_count) + " vertices but " +
                      std::to_string(positions_->rows()) + " positions");
    }
    if (!positions_->allFinite()) throw DataError("mesh positions must be finite");
  }
}

const Points3<double>& TriangleMesh::positions() const {
  if (!positions_) throw DataError("mesh has no vertex positions");
  return *positions_;
}

std::vector<Edge> TriangleMesh::edges() const {
  std::set<Edge> set;
  for (const Face& f : faces_) {
    for (int k = 0; k < 3; ++k) {
      Index a = f[static_cast<std::size_t>(k)], b = f[static_cast<std::size_t>((k + 1) % 3)];
      set.insert({std::min(a, b), std::max(a, b)});
    }
  }
  return {set.begin(), set.end()};
}

double TriangleMesh::bounding_box_diagonal() const {
  const auto& p = positions();
  return (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm();
}

SparseMatrix build_adjacency(const TriangleMesh& mesh) {
  std::vector<Triplet> entries;
  for (const auto& [a, b] : mesh.edges()) {
    entries.push_back({a, b, 1.0});
    entries.push_back({b, a, 1.0});
  }
  return SparseMatrix(mesh.vertex_count(), mesh.vertex_count(), std::move(entries));
}

Subdivision subdivide(const TriangleMesh& mesh) {
  const Index n = mesh.vertex_count();
  const std::vector<Edge> edges = mesh.edges();
  std::map<Edge, Index> midpoint;
  for (std::size_t e = 0; e < edges.size(); ++e) midpoint[edges[e]] = n + static_cast<Index>(e);
  auto mid = [&](Index a, Index b) { return midpoint.at({std::min(a, b), std::max(a, b)}); };

  std::vector<Face> faces;
  faces.reserve(mesh.faces().size() * 4);
  for (const Face& f : mesh.faces()) {
    const Index a = f[0], b = f[1], c = f[2];
    const Index ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
    faces.push_back({a, ab, ca});
    faces.push_back({b, bc, ab});
    faces.push_back({c, ca, bc});
    faces.push_back({ab, bc, ca});
  }

  const Index m = n + static_cast<Index>(edges.size());
  std::vector<Triplet> weights;
  weights.reserve(static_cast<std::size_t>(n) + 2 * edges.size());
  for (Index v = 0; v < n; ++v) weights.push_back({v, v, 1.0});
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Index row = n + static_cast<Index>(e);
    weights.push_back({row, edges[e].first, 0.5});
    weights.push_back({row, edges[e].second, 0.5});
  }
  SparseMatrix upsample(m, n, std::move(weights));

  std::optional<Points3<double>> positions;
  if (mesh.has_positions()) positions = Points3<double>(upsample.apply(mesh.positions()));
  return {TriangleMesh(m, std::move(faces), std::move(positions)), std::move(upsample)};
}

AttentionMask::AttentionMask(BoolMatrix allowed, Index joints, std::vector<Index> unmasked_heads)
    : allowed_(std::move(allowed)), joints_(joints), unmasked_heads_(std::move(unmasked_heads)) {
  if (allowed_.rows() != allowed_.cols()) throw ConfigError("attention mask must be square");
  if (joints_ < 0 || joints_ > allowed_.rows()) throw ConfigError("attention mask joint count out of range");
}

bool AttentionMask::head_masked(Index head) const {
  return std::find(unmasked_heads_.begin(), unmasked_heads_.end(), head) == unmasked_heads_.end();
}

Index AttentionMask::masked_count() const { return allowed_.size() - allowed_.count(); }

std::vector<BoolMatrix> AttentionMask::per_head(Index num_heads) const {
  std::vector<BoolMatrix> out;
  out.reserve(static_cast<std::size_t>(num_heads));
  for (Index h = 0; h < num_heads; ++h) {
    out.push_back(head_masked(h) ? allowed_ : BoolMatrix::Constant(size(), size(), true));
  }
  return out;
}

AttentionMask build_attention_mask(const SparseMatrix& adjacency, Index joints, bool half_heads, Index num_heads) {
  if (adjacency.rows() != adjacency.cols()) throw DataError("adjacency matrix must be square");
  if (!adjacency.is_symmetric()) throw DataError("adjacency matrix is not symmetric");
  if (joints < 0) throw ConfigError("joint count must be non-negative");
  if (num_heads <= 0) throw ConfigError("head count must be positive");
  const Index n = adjacency.rows();
  const Index size = joints + n;
  BoolMatrix allowed = BoolMatrix::Constant(size, size, true);
  allowed.bottomRightCorner(n, n).setConstant(false);
  for (Index v = 0; v < n; ++v) allowed(joints + v, joints + v) = true;
  for (const Triplet& t : adjacency.entries()) {
    if (t.value != 0.0) allowed(joints + t.row, joints + t.col) = true;
  }
  std::vector<Index> unmasked;
  if (half_heads) {
    for (Index h = num_heads / 2; h < num_heads; ++h) unmasked.push_back(h);
  }
  return AttentionMask(std::move(allowed), joints, std::move(unmasked));
}

std::vector<Index> farthest_point_anchors(const TriangleMesh& mesh, Index count) {
  const auto& p = mesh.positions();
  if (count <= 0 || count > mesh.vertex_count()) {
    throw ConfigError("cannot pick " + std::to_string(count) + " anchors from " +
                      std::to_string(mesh.vertex_count()) + " vertices");
  }
  std::vector<Index> anchors{0};
  VecX<double> dist = (p.rowwise() - p.row(0)).rowwise().squaredNorm();
  while (static_cast<Index>(anchors.size()) < count) {
    Index best = 0;
    dist.maxCoeff(&best);
    anchors.push_back(best);
    dist = dist.cwiseMin((p.rowwise() - p.row(best)).rowwise().squaredNorm());
  }
  return anchors;
}

SparseMatrix one_ring_regressor(const TriangleMesh& mesh, std::span<const Index> anchors) {
  if (anchors.empty()) throw ConfigError("regressor needs at least one anchor");
  std::vector<std::set<Index>> ring(static_cast<std::size_t>(mesh.vertex_count()));
  for (const auto& [a, b] : mesh.edges()) {
    ring[static_cast<std::size_t>(a)].insert(b);
    ring[static_cast<std::size_t>(b)].insert(a);
  }
  std::vector<Triplet> entries;
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const Index anchor = anchors[k];
    if (anchor < 0 || anchor >= mesh.vertex_count()) throw ConfigError("anchor vertex out of range");
    std::set<Index> members = ring[static_cast<std::size_t>(anchor)];
    members.insert(anchor);
    const double w = 1.0 / static_cast<double>(members.size());
    for (Index v : members) entries.push_back({static_cast<Index>(k), v, w});
  }
  return SparseMatrix(static_cast<Index>(anchors.size()), mesh.vertex_count(), std::move(entries));
}

MeshTopology MeshTopology::from_mesh(const TriangleMesh& coarse, Index joints) {
  Subdivision sub = subdivide(coarse);
  const std::vector<Index> anchors = farthest_point_anchors(sub.fine, joints);
  MeshTopology topo{build_adjacency(coarse), std::move(sub.upsample), one_ring_regressor(sub.fine, anchors)};
  topo.validate();
  return topo;
}

void MeshTopology::validate() const {
  const Index n = adjacency.rows();
  if (adjacency.cols() != n) throw DataError("adjacency must be square");
  if (!adjacency.is_symmetric()) throw DataError("adjacency must be symmetric");
  if (upsample.cols() != n) {
    throw DataError("upsampling matrix has " + std::to_string(upsample.cols()) + " columns for " +
                    std::to_string(n) + " coarse vertices");
  }
  if (regressor.cols() != upsample.rows()) {
    throw DataError("joint regressor has " + std::to_string(regressor.cols()) + " columns for " +
                    std::to_string(upsample.rows()) + " fine vertices");
  }
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file " + path.string());
  std::vector<Eigen::RowVector3d> verts;
  std::vector<Face> faces;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::RowVector3d p;
      if (!(ls >> p[0] >> p[1] >> p[2])) fail("malformed vertex record");
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<Index> idx;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        long long value = 0;
        auto res = std::from_chars(head.data(), head.data() + head.size(), value);
        if (res.ec != std::errc{} || res.ptr != head.data() + head.size() || value < 1) {
          fail("bad face index '" + tok + "'");
        }
        idx.push_back(static_cast<Index>(value - 1));
      }
      if (idx.size() != 3) fail("only triangular faces are supported");
      faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  if (verts.empty()) throw DataError(path.string() + ": no vertices");
  Points3<double> positions(static_cast<Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) positions.row(static_cast<Index>(i)) = verts[i];
  return TriangleMesh(static_cast<Index>(verts.size()), std::move(faces), std::move(positions));
}

void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const auto& p = mesh.positions();
  for (Index i = 0; i < p.rows(); ++i) {
    out << "v " << format_double(p(i, 0)) << ' ' << format_double(p(i, 1)) << ' ' << format_double(p(i, 2)) << '\n';
  }
  for (const Face& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void save_ply(const std::filesystem::path& path, const Points3<double>& vertices, std::span<const Face> faces) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << vertices.rows() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << faces.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  for (Index i = 0; i < vertices.rows(); ++i) {
    out << format_double(vertices(i, 0)) << ' ' << format_double(vertices(i, 1)) << ' ' << format_double(vertices(i, 2)) << '\n';
  }
  for (const Face& f : faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

TriangleMesh make_tetrahedron(double radius) {
  Points3<double> p(4, 3);
  const double s = radius / std::sqrt(3.0);
  p << s, s, s,  //
      s, -s, -s,  //
      -s, s, -s,  //
      -s, -s, s;
  // outward-facing winding
  return TriangleMesh(4, {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}}, std::move(p));
}

TriangleMesh make_two_triangles() {
  Points3<double> p(4, 3);
  p << 0, 0, 0,  //
      1, 0, 0,  //
      0, 1, 0,  //
      1, 1, 0;
  return TriangleMesh(4, {{0, 1, 2}, {1, 3, 2}}, std::move(p));
}

}  // namespace fastmetro
