// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fastmetro/gradcheck.hpp"
#include "fastmetro/losses.hpp"
#include "fastmetro/metrics.hpp"
#include "test_support.hpp"

using namespace fastmetro;
using fastmetro::testing::random_matrix;

namespace {

Var<double> constant(Tape<double>& tape, const RowMatX<double>& m) {
  return tape.constant(DenseTensor<double>::from_matrix(m));
}

double value(const Var<double>& v) { return v.value().item(); }

RowMatX<double> rows(std::initializer_list<std::initializer_list<double>> init) {
  RowMatX<double> m(static_cast<Index>(init.size()), static_cast<Index>(init.begin()->size()));
  Index r = 0;
  for (const auto& row : init) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Mat3<double> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

RowMatX<double> similarity(const RowMatX<double>& p, double s, const Mat3<double>& r, const Eigen::RowVector3d& t) {
  return ((s * p * r.transpose()).rowwise() + t).eval();
}

}  // namespace

TEST_CASE("vertex loss worked examples") {
  Tape<double> tape(false);
  const RowMatX<double> a = rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(value(loss_vertex(constant(tape, a), constant(tape, a))) == 0.0);
  CHECK(value(loss_vertex(constant(tape, rows({{0, 0, 0}})), constant(tape, rows({{1, 2, 3}})))) == 6.0);
  CHECK(value(loss_vertex(constant(tape, rows({{1, 0, 0}, {0, 1, 0}})), constant(tape, rows({{0, 0, 0}, {0, 0, 0}})))) ==
        1.0);
  CHECK_THROWS_AS(loss_vertex(constant(tape, a), constant(tape, rows({{1, 2, 3}}))), DimensionError);
}

TEST_CASE("joint losses sum both branches") {
  Tape<double> tape(false);
  const auto gt = constant(tape, rows({{0, 0, 0}}));
  const auto p = constant(tape, rows({{1, 0, 0}}));
  const auto r = constant(tape, rows({{0, 2, 0}}));
  CHECK(value(loss_joint(p, r, gt)) == 3.0);
  CHECK(value(loss_joint(r, p, gt)) == 3.0);
  CHECK(value(loss_joint(gt, gt, gt)) == 0.0);

  const RowMatX<double> g2 = rows({{0, 0}, {2, 2}});
  const RowMatX<double> off = rows({{1, 1}, {3, 3}});
  CHECK(value(loss_joint2d(constant(tape, g2), constant(tape, off), constant(tape, g2))) == 2.0);
  // permuting joints in all three arguments together
  const RowMatX<double> g2p = g2.colwise().reverse();
  const RowMatX<double> offp = off.colwise().reverse();
  CHECK(value(loss_joint2d(constant(tape, g2p), constant(tape, offp), constant(tape, g2p))) == 2.0);
}

TEST_CASE("total loss arithmetic and availability flags") {
  LossWeights w;
  CHECK(std::abs(total_loss(0.01, 0.002, 0.03, w) - 6.0) < 1e-12);
  w.has_2d = false;
  CHECK(std::abs(total_loss(0.01, 0.002, 0.03, w) - 3.0) < 1e-12);
  w.has_3d = false;
  CHECK(total_loss(0.01, 0.002, 0.03, w) == 0.0);
  w.has_2d = true;
  CHECK(std::abs(total_loss(0.01, 0.002, 0.03, w) - 3.0) < 1e-12);

  LossWeights bad;
  bad.lambda_joint3d = -1;
  CHECK_THROWS_AS(total_loss(0.0, 0.0, 0.0, bad), ConfigError);

  Tape<double> tape(false);
  auto s = [&](double v) { return tape.constant(DenseTensor<double>::scalar(v)); };
  CHECK(std::abs(value(total_loss(s(0.01), s(0.002), s(0.03), LossWeights{})) - 6.0) < 1e-12);
}

TEST_CASE("losses are non-negative and vanish only at the target") {
  std::mt19937_64 rng(3);
  Tape<double> tape(false);
  for (int trial = 0; trial < 50; ++trial) {
    const RowMatX<double> gt = random_matrix(5, 3, rng);
    const RowMatX<double> pred = random_matrix(5, 3, rng);
    CHECK(value(loss_vertex(constant(tape, pred), constant(tape, gt))) > 0.0);
    CHECK(value(loss_joint(constant(tape, gt), constant(tape, pred), constant(tape, gt))) > 0.0);
  }
}

TEST_CASE("total loss gradient wrt predictions matches finite differences") {
  std::mt19937_64 rng(11);
  const RowMatX<double> gv = random_matrix(6, 3, rng), gj = random_matrix(2, 3, rng), g2 = random_matrix(2, 2, rng);
  const RowMatX<double> rj = random_matrix(2, 3, rng), r2 = random_matrix(2, 2, rng);
  const RowMatX<double> pj2 = random_matrix(2, 2, rng);
  // the prediction packs fine vertices (6 rows) above joints (2 rows)
  const auto f = [&](const Var<double>& x) {
    Tape<double>& tape = x.tape();
    const auto v = slice_rows(x, 0, 6);
    const auto j = slice_rows(x, 6, 2);
    const auto lv = loss_vertex(v, constant(tape, gv));
    const auto lj = loss_joint(j, constant(tape, rj), constant(tape, gj));
    const auto l2 = loss_joint2d(constant(tape, pj2), constant(tape, r2), constant(tape, g2));
    return total_loss(lv, lj, l2, LossWeights{});
  };
  const auto x = DenseTensor<double>::from_matrix(random_matrix(8, 3, rng));
  CHECK(finite_difference_check<double>(f, x, 1e-6, 1e-6) < 1e-4);
}

TEST_CASE("procrustes recovers a similarity transform") {
  std::mt19937_64 rng(5);
  const RowMatX<double> gt = random_matrix(14, 3, rng, 100.0);
  CHECK((procrustes_align(gt, gt) - gt).cwiseAbs().maxCoeff() < 1e-10);

  const double a = std::numbers::pi / 6.0;
  Mat3<double> rz;
  rz << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  const RowMatX<double> pred = similarity(gt, 2.0, rz, Eigen::RowVector3d(5, 5, 5));
  CHECK((procrustes_align(pred, gt) - gt).cwiseAbs().maxCoeff() < 1e-8);

  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_real_distribution<double> s(0.1, 10.0);
    const RowMatX<double> g = random_matrix(14, 3, rng, 100.0);
    const RowMatX<double> p = similarity(g, s(rng), random_rotation(rng), random_matrix(1, 3, rng, 50.0).row(0));
    CHECK(pa_mpjpe(p, g) < 1e-8);
  }
}

TEST_CASE("procrustes on a mirrored target uses a proper rotation") {
  std::mt19937_64 rng(8);
  const RowMatX<double> gt = random_matrix(10, 3, rng);
  RowMatX<double> mirrored = gt;
  mirrored.col(0) *= -1.0;
  const RowMatX<double> aligned = procrustes_align(mirrored, gt);
  // recover the linear map applied to the centred mirrored points
  const RowMatX<double> p0 = mirrored.rowwise() - mirrored.colwise().mean();
  const RowMatX<double> a0 = aligned.rowwise() - aligned.colwise().mean();
  const Mat3<double> map = (p0.transpose() * p0).ldlt().solve(p0.transpose() * a0).transpose();
  const double scale = std::cbrt(std::abs(map.determinant()));
  CHECK(map.determinant() > 0.0);
  CHECK(((map / scale).transpose() * (map / scale) - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(mean_point_error(aligned, gt) > 1e-3);
}

TEST_CASE("procrustes input validation") {
  const RowMatX<double> two = rows({{0, 0, 0}, {1, 0, 0}});
  CHECK_THROWS_AS(procrustes_align(two, two), DimensionError);
  const RowMatX<double> flat = RowMatX<double>::Ones(4, 3);
  const RowMatX<double> spread = rows({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  CHECK_THROWS_AS(procrustes_align(spread, flat), NumericError);
  // a collapsed prediction aligns to the target centroid
  const RowMatX<double> aligned = procrustes_align(flat, spread);
  for (Index i = 0; i < 4; ++i) CHECK((aligned.row(i) - spread.colwise().mean()).norm() < 1e-15);
}

TEST_CASE("point errors") {
  CHECK(mpjpe<double>(rows({{3, 4, 0}}), rows({{0, 0, 0}})) == 5.0);
  CHECK(mpvpe<double>(rows({{1, 1, 1}, {2, 2, 2}}), rows({{1, 1, 1}, {2, 2, 2}})) == 0.0);
  CHECK_THROWS_AS(mpjpe<double>(rows({{3, 4, 0}}), rows({{0, 0}})), DimensionError);

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const RowMatX<double> g = random_matrix(14, 3, rng, 50.0);
    const RowMatX<double> p = random_matrix(14, 3, rng, 50.0);
    CHECK(pa_mpjpe(p, g) <= mpjpe(p, g) + 1e-9);
    CHECK(pa_mpjpe(g, g) < 1e-9);
  }
}

TEST_CASE("evaluation report CSV") {
  const auto dir = std::filesystem::temp_directory_path() / "fastmetro_report_test";
  std::filesystem::create_directories(dir);
  const std::vector<SampleMetrics> rows_in{{0, 1.5, 0.5, 2.0}, {1, 2.5, 1.5, 4.0}};
  write_eval_report(dir / "report.csv", rows_in);
  std::ifstream in(dir / "report.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "sample_id,mpjpe,pa_mpjpe,mpvpe\n0,1.5,0.5,2\n1,2.5,1.5,4\n");
  const SampleMetrics mean = mean_metrics(rows_in);
  CHECK(mean.mpjpe == 2.0);
  CHECK(mean.pa_mpjpe == 1.0);
  CHECK(mean.mpvpe == 3.0);
  std::filesystem::remove_all(dir);
}
