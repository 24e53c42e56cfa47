// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "fastmetro/mesh.hpp"
#include "test_support.hpp"

using namespace fastmetro;
using fastmetro::testing::random_matrix;

namespace {

TriangleMesh single_triangle() {
  Points3<double> p(3, 3);
  p << 0, 0, 0, 2, 0, 0, 0, 4, 0;
  return TriangleMesh(3, {{0, 1, 2}}, p);
}

TriangleMesh random_mesh(std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> nv(4, 30);
  const Index n = nv(rng);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::uniform_int_distribution<int> nf(1, 40);
  std::vector<Face> faces;
  const int count = nf(rng);
  while (static_cast<int>(faces.size()) < count) {
    Face f{pick(rng), pick(rng), pick(rng)};
    if (f[0] != f[1] && f[1] != f[2] && f[0] != f[2]) faces.push_back(f);
  }
  return TriangleMesh(n, faces, Points3<double>(random_matrix(n, 3, rng)));
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fastmetro_mesh_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("TriangleMesh rejects invalid faces") {
  CHECK_THROWS_AS(TriangleMesh(3, {{0, 1, 3}}), DataError);
  CHECK_THROWS_AS(TriangleMesh(3, {{0, 1, 1}}), DataError);
  CHECK_THROWS_AS(TriangleMesh(3, {{0, 1, 2}}, Points3<double>(2, 3)), DataError);
}

TEST_CASE("build_adjacency: enumerated examples") {
  const SparseMatrix tri = build_adjacency(single_triangle());
  CHECK(tri.nnz() == 6);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(tri.coeff(i, j) == (i != j ? 1.0 : 0.0));

  CHECK(build_adjacency(make_tetrahedron()).nnz() == 12);

  const SparseMatrix two = build_adjacency(make_two_triangles());
  CHECK(two.nnz() == 10);
  CHECK(two.coeff(0, 3) == 0.0);
  CHECK(two.coeff(3, 0) == 0.0);
  CHECK(two.coeff(1, 2) == 1.0);
}

TEST_CASE("build_adjacency: symmetric with zero diagonal on random meshes") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    const TriangleMesh mesh = random_mesh(rng);
    const RowMatX<double> a = build_adjacency(mesh).to_dense();
    CHECK(a == a.transpose());
    CHECK(a.diagonal().isZero());
    // every face pair is present
    for (const Face& f : mesh.faces()) {
      CHECK(a(f[0], f[1]) == 1.0);
      CHECK(a(f[1], f[2]) == 1.0);
      CHECK(a(f[2], f[0]) == 1.0);
    }
  }
}

TEST_CASE("subdivide: counts and upsampling rows") {
  const Subdivision tri = subdivide(single_triangle());
  CHECK(tri.fine.vertex_count() == 6);
  CHECK(tri.fine.face_count() == 4);

  const Subdivision tet = subdivide(make_tetrahedron());
  CHECK(tet.fine.vertex_count() == 10);
  CHECK(tet.fine.face_count() == 16);
  CHECK(tet.upsample.rows() == 10);
  CHECK(tet.upsample.cols() == 4);
  const RowMatX<double> u = tet.upsample.to_dense();
  CHECK(u.topRows(4) == RowMatX<double>::Identity(4, 4));
  for (Index r = 4; r < 10; ++r) {
    CHECK((u.row(r).array() == 0.5).count() == 2);
    CHECK(u.row(r).sum() == 1.0);
  }

  const Subdivision twice = subdivide(tet.fine);
  CHECK(twice.fine.vertex_count() == 34);
  CHECK(twice.fine.face_count() == 64);
}

TEST_CASE("subdivide: U reproduces geometric midpoints exactly") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 50; ++i) {
    const TriangleMesh mesh = random_mesh(rng);
    const Subdivision s = subdivide(mesh);
    const auto& coarse = mesh.positions();
    const Points3<double> fine = Points3<double>(s.upsample.apply(coarse));
    CHECK(fine == s.fine.positions());
    const auto edges = mesh.edges();
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const Eigen::RowVector3d mid = (coarse.row(edges[e].first) + coarse.row(edges[e].second)) / 2.0;
      CHECK(fine.row(mesh.vertex_count() + static_cast<Index>(e)) == mid);
    }
    CHECK_NOTHROW(s.upsample.check_row_sums());
  }
}

TEST_CASE("subdivide: levels compose by sparse product") {
  const TriangleMesh tet = make_tetrahedron(2.0);
  const Subdivision one = subdivide(tet);
  const Subdivision two = subdivide(one.fine);
  const SparseMatrix chained = two.upsample * one.upsample;
  CHECK(chained.rows() == 34);
  CHECK(chained.cols() == 4);
  const RowMatX<double> direct = chained.apply(tet.positions());
  CHECK((direct - RowMatX<double>(two.fine.positions())).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("build_attention_mask: enumerated examples") {
  const AttentionMask tri = build_attention_mask(build_adjacency(single_triangle()), 2, false, 8);
  CHECK(tri.size() == 5);
  CHECK(tri.masked_count() == 0);

  const AttentionMask two = build_attention_mask(build_adjacency(make_two_triangles()), 1, false, 8);
  CHECK(two.size() == 5);
  CHECK(two.masked_count() == 2);
  CHECK_FALSE(two.allowed()(1 + 0, 1 + 3));
  CHECK_FALSE(two.allowed()(1 + 3, 1 + 0));
  for (Index i = 0; i < 5; ++i) CHECK(two.allowed()(i, i));
}

TEST_CASE("build_attention_mask: diagonal kept even for isolated vertices") {
  const SparseMatrix empty(3, 3, {});
  const AttentionMask m = build_attention_mask(empty, 2, false, 4);
  for (Index i = 0; i < 5; ++i) CHECK(m.allowed()(i, i));
  CHECK(m.masked_count() == 6);
}

TEST_CASE("build_attention_mask: half heads") {
  const AttentionMask m = build_attention_mask(build_adjacency(make_two_triangles()), 1, true, 8);
  const auto heads = m.per_head(8);
  REQUIRE(heads.size() == 8);
  for (Index h = 0; h < 8; ++h) {
    CHECK(m.head_masked(h) == (h < 4));
    CHECK(heads[static_cast<std::size_t>(h)].count() == (h < 4 ? 23 : 25));
  }
}

TEST_CASE("build_attention_mask: rejects asymmetric adjacency") {
  const SparseMatrix lopsided(3, 3, {{0, 1, 1.0}});
  CHECK_THROWS_AS(build_attention_mask(lopsided, 1, false, 2), DataError);
}

TEST_CASE("build_attention_mask: masked count property on random meshes") {
  std::mt19937_64 rng(29);
  std::uniform_int_distribution<Index> kdist(0, 5);
  for (int i = 0; i < 200; ++i) {
    const TriangleMesh mesh = random_mesh(rng);
    const Index k = kdist(rng);
    const SparseMatrix adj = build_adjacency(mesh);
    const AttentionMask mask = build_attention_mask(adj, k, false, 4);
    const Index n = mesh.vertex_count();
    const Index non_adjacent = n * (n - 1) / 2 - static_cast<Index>(mesh.edges().size());
    CHECK(mask.masked_count() == 2 * non_adjacent);
    CHECK(mask.allowed().topRows(k).all());
    CHECK(mask.allowed().leftCols(k).all());
    const BoolMatrix vv = mask.allowed().bottomRightCorner(n, n);
    CHECK((vv == vv.transpose()).all());
  }
}

TEST_CASE("sparse_dense_matmul: worked examples") {
  Tape<double> tape;
  std::mt19937_64 rng(41);
  const auto x = DenseTensor<double>::from_matrix(random_matrix(4, 3, rng));
  auto xv = tape.constant(x);
  CHECK(sparse_dense_matmul(SparseMatrix::identity(4), xv).value().values() == x.values());

  const SparseMatrix half(1, 2, {{0, 0, 0.5}, {0, 1, 0.5}});
  RowMatX<double> pts(2, 3);
  pts << 0, 0, 0, 2, 4, 6;
  auto y = sparse_dense_matmul(half, tape.constant(DenseTensor<double>::from_matrix(pts)));
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y.value().values() == Eigen::Vector3d(1, 2, 3));
}

TEST_CASE("sparse_dense_matmul: gradient equals the dense-product gradient") {
  std::mt19937_64 rng(43);
  const SparseMatrix s(5, 5, {{0, 0, 1.0}, {0, 3, -2.0}, {1, 4, 0.5}, {3, 1, 3.0}, {4, 2, 1.5}, {4, 4, -1.0}});
  const auto x = DenseTensor<double>::from_matrix(random_matrix(5, 3, rng));
  const auto probe = DenseTensor<double>::from_matrix(random_matrix(5, 3, rng));

  Tape<double> sparse_tape;
  auto xs = sparse_tape.variable(x);
  sparse_tape.backward(sum(mul(sparse_dense_matmul(s, xs), sparse_tape.constant(probe))));

  Tape<double> dense_tape;
  auto xd = dense_tape.variable(x);
  auto sd = dense_tape.constant(DenseTensor<double>::from_matrix(s.to_dense()));
  dense_tape.backward(sum(mul(matmul(sd, xd), dense_tape.constant(probe))));

  CHECK((xs.grad() - xd.grad()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse_dense_matmul: equals dense product on random cases") {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<Index> dim(1, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Index rows = dim(rng), cols = dim(rng), d = dim(rng);
    std::vector<Triplet> e;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        if (unit(rng) < 0.3) e.push_back({r, c, unit(rng) - 0.5});
    const SparseMatrix s(rows, cols, e);
    const RowMatX<double> x = random_matrix(cols, d, rng);
    Tape<double> tape(false);
    auto y = sparse_dense_matmul(s, tape.constant(DenseTensor<double>::from_matrix(x)));
    const RowMatX<double> dense = s.to_dense() * x;
    CHECK((y.value().matrix() - dense).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matrix files: round trip reproduces entries exactly") {
  const Subdivision s = subdivide(subdivide(make_tetrahedron(3.7)).fine);
  const auto path = temp_path("u.mtx");
  save_matrix(path, s.upsample);
  const SparseMatrix back = load_matrix(path, std::pair<Index, Index>{34, 10}, MatrixKind::upsampling);
  CHECK(back == s.upsample);

  const SparseMatrix odd(2, 3, {{0, 1, 0.1}, {1, 2, -1.0 / 3.0}, {1, 0, 1e-300}});
  save_matrix(path, odd);
  CHECK(load_matrix(path) == odd);
}

TEST_CASE("matrix files: invalid content is rejected") {
  const auto path = temp_path("bad.mtx");
  write_text(path, "2 2 2\n0 0 1\n0 0 0.5\n");
  CHECK_THROWS_AS(load_matrix(path), DataError);

  write_text(path, "2 2 2\n0 0 1\n1 1 0.25\n");
  try {
    load_matrix(path, std::nullopt, MatrixKind::upsampling);
    FAIL("expected row-sum violation");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  write_text(path, "2 2 1\n0 0 1\n");
  CHECK_THROWS_AS(load_matrix(path, std::pair<Index, Index>{3, 2}), DataError);

  write_text(path, "2 2 2\n0 0 1\n");
  CHECK_THROWS_AS(load_matrix(path), DataError);

  write_text(path, "2 2 1\n0 5 1\n");
  CHECK_THROWS_AS(load_matrix(path), DataError);

  write_text(path, "2 2 1\n0 0 one\n");
  CHECK_THROWS_AS(load_matrix(path), DataError);

  write_text(path, "2 2\n");
  CHECK_THROWS_AS(load_matrix(path), DataError);

  CHECK_THROWS_AS(load_matrix(temp_path("missing.mtx")), DataError);
}

TEST_CASE("matrix files: human-mesh scale shapes are enforced") {
  // K = 14 joints, N = 431 coarse and M = 6890 fine vertices
  std::mt19937_64 rng(53);
  std::uniform_int_distribution<Index> coarse(0, 430), fine(0, 6889);
  std::vector<Triplet> u;
  for (Index r = 0; r < 6890; ++r) {
    const Index a = coarse(rng);
    const Index b = (a + 1 + coarse(rng) % 430) % 431;
    u.push_back({r, a, 0.25});
    u.push_back({r, b, 0.75});
  }
  std::vector<Triplet> j;
  for (Index r = 0; r < 14; ++r) j.push_back({r, fine(rng), 1.0});
  const auto up = temp_path("smpl_u.mtx"), jr = temp_path("smpl_r.mtx");
  save_matrix(up, SparseMatrix(6890, 431, u));
  save_matrix(jr, SparseMatrix(14, 6890, j));
  CHECK(load_matrix(up, std::pair<Index, Index>{6890, 431}, MatrixKind::upsampling).rows() == 6890);
  CHECK(load_matrix(jr, std::pair<Index, Index>{14, 6890}).cols() == 6890);
  CHECK_THROWS_AS(load_matrix(up, std::pair<Index, Index>{431, 6890}), DataError);
}

TEST_CASE("OBJ round trip and validation") {
  const TriangleMesh tet = make_tetrahedron(5.0);
  const auto path = temp_path("tet.obj");
  save_obj(path, tet);
  const TriangleMesh back = load_obj(path);
  CHECK(back.vertex_count() == 4);
  CHECK(back.faces() == tet.faces());
  CHECK(back.positions() == tet.positions());

  write_text(path, "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n");
  CHECK(load_obj(path).face_count() == 1);

  write_text(path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n");
  CHECK_THROWS_AS(load_obj(path), DataError);

  write_text(path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n");
  CHECK_THROWS_AS(load_obj(path), DataError);
}

TEST_CASE("one-ring regressor rows are barycentric") {
  const Subdivision s = subdivide(subdivide(make_tetrahedron()).fine);
  const auto anchors = farthest_point_anchors(s.fine, 4);
  CHECK(std::set<Index>(anchors.begin(), anchors.end()).size() == 4);
  const SparseMatrix r = one_ring_regressor(s.fine, anchors);
  CHECK(r.rows() == 4);
  CHECK(r.cols() == 34);
  CHECK_NOTHROW(r.check_row_sums(1e-12));
}
