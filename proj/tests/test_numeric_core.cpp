// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "fastmetro/gradcheck.hpp"
#include "fastmetro/ops.hpp"
#include "fastmetro/svd3.hpp"
#include "test_support.hpp"

using namespace fastmetro;
using fastmetro::testing::random_matrix;
using fastmetro::testing::random_tensor;

using T = DenseTensor<double>;
using V = Var<double>;
using Fn = std::function<V(const V&)>;

namespace {

T tensor(Shape shape, std::initializer_list<double> values) {
  VecX<double> v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return T(std::move(shape), v);
}

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("linear: identity and hand-multiplied examples") {
  Tape<double> tape;
  auto x = tape.constant(tensor({1, 2}, {1, 2}));
  auto w = tape.constant(T::from_matrix(Eigen::Matrix2d::Identity()));
  auto b = tape.constant(tensor({2}, {0, 0}));
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[1] == 2.0);

  auto x2 = tape.constant(tensor({2, 2}, {1, 0, 0, 1}));
  auto w2 = tape.constant(tensor({2, 2}, {2, 0, 0, 3}));
  auto b2 = tape.constant(tensor({2}, {1, 1}));
  auto y2 = linear(x2, w2, b2);
  CHECK(y2.value().values() == (VecX<double>(4) << 3, 1, 1, 4).finished());
}

TEST_CASE("linear: shape mismatch names the shapes") {
  Tape<double> tape;
  auto x = tape.constant(T(Shape{2, 3}));
  auto w = tape.constant(T(Shape{4, 2}));
  auto b = tape.constant(T(Shape{2}));
  CHECK_THROWS_AS(linear(x, w, b), DimensionError);
  try {
    linear(x, w, b);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("linear: weight gradient of sum matches central differences") {
  std::mt19937_64 rng(11);
  const T x = random_tensor({3, 4}, rng);
  const T b = random_tensor({5}, rng);
  const T w = random_tensor({4, 5}, rng);
  Fn f = [&](const V& wv) { return sum(linear(wv.tape().constant(x), wv, wv.tape().constant(b))); };
  CHECK(finite_difference_check(f, w, kStep) < 1e-6);
}

TEST_CASE("masked_softmax: worked examples") {
  Tape<double> tape;
  auto uniform = masked_softmax(tape.constant(tensor({1, 1, 2}, {0, 0})));
  CHECK(uniform.value()[0] == doctest::Approx(0.5));
  CHECK(uniform.value()[1] == doctest::Approx(0.5));

  BoolMatrix only_middle(1, 3);
  only_middle << false, true, false;
  std::vector<BoolMatrix> masks{only_middle};
  auto single = masked_softmax(tape.constant(tensor({1, 1, 3}, {5, 5, 5})), masks);
  CHECK(single.value()[0] == 0.0);
  CHECK(single.value()[1] == 1.0);
  CHECK(single.value()[2] == 0.0);

  // exp-normalize by hand: p1 = 1 / (1 + e)
  const double p1 = 1.0 / (1.0 + std::exp(1.0));
  auto two = masked_softmax(tape.constant(tensor({1, 1, 2}, {1, 2})));
  CHECK(two.value()[0] == doctest::Approx(p1).epsilon(1e-12));
  CHECK(two.value()[0] == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(two.value()[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("masked_softmax: fully masked row is a configuration error naming the row") {
  Tape<double> tape;
  BoolMatrix mask(2, 2);
  mask << true, true, false, false;
  std::vector<BoolMatrix> masks{mask};
  auto scores = tape.constant(T(Shape{1, 2, 2}));
  try {
    masked_softmax(scores, masks);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("masked_softmax: properties over random inputs") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index h = 3, q = 5, k = 6;
    const T scores = random_tensor({h, q, k}, rng, 3.0);
    std::vector<BoolMatrix> masks;
    for (Index head = 0; head < h; ++head) {
      BoolMatrix m(q, k);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng);
      for (Index r = 0; r < q; ++r) m(r, r) = true;
      masks.push_back(m);
    }
    Tape<double> tape;
    auto s = tape.variable(scores);
    auto p = masked_softmax(s, masks);
    for (Index head = 0; head < h; ++head) {
      for (Index r = 0; r < q; ++r) {
        double row = 0;
        for (Index c = 0; c < k; ++c) {
          const double v = p.value()[(head * q + r) * k + c];
          if (!masks[static_cast<std::size_t>(head)](r, c)) CHECK(v == 0.0);
          row += v;
        }
        CHECK(std::abs(row - 1.0) < 1e-6);
      }
    }
    // gradient is zero through masked entries
    auto weights = tape.constant(random_tensor({h, q, k}, rng));
    tape.backward(sum(mul(p, weights)));
    const auto g = s.grad();
    for (Index head = 0; head < h; ++head)
      for (Index r = 0; r < q; ++r)
        for (Index c = 0; c < k; ++c)
          if (!masks[static_cast<std::size_t>(head)](r, c)) CHECK(g[(head * q + r) * k + c] == 0.0);

    // an all-true mask is bitwise identical to no mask
    std::vector<BoolMatrix> all_true{BoolMatrix::Constant(q, k, true)};
    Tape<double> t2;
    auto a = masked_softmax(t2.constant(scores));
    auto b = masked_softmax(t2.constant(scores), all_true);
    CHECK(a.value().values() == b.value().values());
  }
}

TEST_CASE("layer_norm: worked examples") {
  Tape<double> tape;
  auto ones = tape.constant(T::filled({3}, 1.0));
  auto zeros = tape.constant(T(Shape{3}));
  auto y = layer_norm(tape.constant(tensor({3}, {1, 1, 1})), ones, zeros, 1e-5);
  for (Index i = 0; i < 3; ++i) CHECK(y.value()[i] == 0.0);

  auto g2 = tape.constant(T::filled({2}, 1.0));
  auto s2 = tape.constant(T(Shape{2}));
  auto y2 = layer_norm(tape.constant(tensor({2}, {-1, 1})), g2, s2, 1e-5);
  CHECK(y2.value()[0] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(y2.value()[1] == doctest::Approx(1.0).epsilon(1e-3));

  std::mt19937_64 rng(3);
  auto x = tape.constant(random_tensor({4, 7}, rng, 5.0));
  auto g = tape.constant(T::filled({7}, 1.0));
  auto s = tape.constant(T(Shape{7}));
  auto n = layer_norm(x, g, s, 1e-5);
  for (Index r = 0; r < 4; ++r) {
    auto row = n.value().matrix().row(r);
    CHECK(std::abs(row.mean()) < 1e-5);
    CHECK(std::abs((row.array() - row.mean()).square().mean() - 1.0) < 1e-5);
  }
}

TEST_CASE("l1_mean: worked examples") {
  Tape<double> tape;
  std::mt19937_64 rng(1);
  auto a = tape.constant(random_tensor({4, 3}, rng));
  CHECK(l1_mean(a, a).value().item() == 0.0);
  CHECK(l1_mean(tape.constant(tensor({1, 3}, {0, 0, 0})), tape.constant(tensor({1, 3}, {1, -2, 3}))).value().item() ==
        6.0);
  CHECK(l1_mean(tape.constant(tensor({2, 2}, {1, 0, 0, 1})), tape.constant(T(Shape{2, 2}))).value().item() == 1.0);
  CHECK_THROWS_AS(l1_mean(tape.constant(T(Shape{2, 2})), tape.constant(T(Shape{2, 3}))), DimensionError);
}

TEST_CASE("finite_difference_check: worked examples") {
  std::mt19937_64 rng(2);
  Fn total = [](const V& x) { return sum(x); };
  {
    Tape<double> tape;
    auto v = tape.variable(random_tensor({3, 2}, rng));
    tape.backward(total(v));
    CHECK(v.grad() == VecX<double>::Ones(6));
  }
  // dyadic inputs and step keep every sum exact, so the error is exactly 0
  CHECK(finite_difference_check(total, tensor({3, 2}, {1, -2, 3.5, 0.25, 8, -1}), std::ldexp(1.0, -17)) == 0.0);
  CHECK(finite_difference_check(total, random_tensor({3, 2}, rng), kStep) < 1e-10);

  Fn squares = [](const V& x) { return sum(mul(x, x)); };
  const T x = tensor({2}, {1, 2});
  {
    Tape<double> tape;
    auto v = tape.variable(x);
    tape.backward(squares(v));
    CHECK(v.grad()[0] == 2.0);
    CHECK(v.grad()[1] == 4.0);
  }
  CHECK(finite_difference_check(squares, x, 1e-5) < 1e-8);
}

TEST_CASE("every differentiable primitive matches central differences") {
  std::mt19937_64 rng(2024);
  SparseRowMat<double> sparse(4, 5);
  sparse.insert(0, 1) = 0.5;
  sparse.insert(0, 3) = 0.5;
  sparse.insert(2, 0) = 2.0;
  sparse.insert(3, 4) = -1.0;
  sparse.makeCompressed();

  for (int trial = 0; trial < 10; ++trial) {
    const T a = random_tensor({4, 6}, rng);
    const T b = random_tensor({4, 6}, rng);
    const T w = random_tensor({6, 3}, rng);
    const T bias = random_tensor({3}, rng);
    const T row = random_tensor({6}, rng);
    const T s = random_tensor({1}, rng);
    const T probe43 = random_tensor({4, 3}, rng);
    // weighted sums avoid trivially symmetric gradients
    auto project = [&](const V& y) {
      std::mt19937_64 local(99);
      return sum(mul(y, y.tape().constant(random_tensor(y.shape(), local))));
    };
    auto c = [](const V& ref, const T& t) { return ref.tape().constant(t); };

    std::vector<std::pair<const char*, std::pair<Fn, T>>> cases = {
        {"add", {[&](const V& x) { return project(add(x, c(x, b))); }, a}},
        {"sub", {[&](const V& x) { return project(sub(c(x, b), x)); }, a}},
        {"mul", {[&](const V& x) { return project(mul(x, c(x, b))); }, a}},
        {"scale", {[&](const V& x) { return project(scale(x, 1.7)); }, a}},
        {"scale_by/x", {[&](const V& x) { return project(scale_by(x, c(x, s))); }, a}},
        {"scale_by/s", {[&](const V& x) { return project(scale_by(c(x, a), x)); }, s}},
        {"add_row/x", {[&](const V& x) { return project(add_row(x, c(x, row))); }, a}},
        {"add_row/row", {[&](const V& x) { return project(add_row(c(x, a), x)); }, row}},
        {"relu", {[&](const V& x) { return project(relu(x)); }, a}},
        {"softplus", {[&](const V& x) { return project(softplus(scale(x, 4.0))); }, a}},
        {"linear/x", {[&](const V& x) { return project(linear(x, c(x, w), c(x, bias))); }, a}},
        {"linear/w", {[&](const V& x) { return project(linear(c(x, a), x, c(x, bias))); }, w}},
        {"linear/b", {[&](const V& x) { return project(linear(c(x, a), c(x, w), x)); }, bias}},
        {"matmul/a", {[&](const V& x) { return project(matmul(x, c(x, w))); }, a}},
        {"matmul/b", {[&](const V& x) { return project(matmul(c(x, a), x)); }, w}},
        {"sparse_matmul", {[&](const V& x) { return sum(mul(sparse_matmul(sparse, x), c(x, a))); },
                           random_tensor({5, 6}, rng)}},
        {"layer_norm/x",
         {[&](const V& x) { return project(layer_norm(x, c(x, row), c(x, T::filled({6}, 0.3)), 1e-5)); }, a}},
        {"layer_norm/gain", {[&](const V& x) { return project(layer_norm(c(x, a), x, c(x, row), 1e-5)); }, row}},
        {"layer_norm/shift", {[&](const V& x) { return project(layer_norm(c(x, a), c(x, row), x, 1e-5)); }, row}},
        {"reshape", {[&](const V& x) { return project(reshape(reshape(x, {24}), {4, 6})); }, a}},
        {"concat_rows", {[&](const V& x) { return project(slice_rows(concat_rows<double>({x, c(x, b)}), 2, 4)); }, a}},
        {"slice_cols", {[&](const V& x) { return sum(mul(slice_cols(x, 1, 3), c(x, probe43))); }, a}},
        {"l1_mean", {[&](const V& x) { return l1_mean(x, c(x, b)); }, a}},
        {"extract_patches",
         {[&](const V& x) {
            std::mt19937_64 local(7);
            return sum(mul(extract_patches(x, 2, 2), x.tape().constant(random_tensor({4, 8}, local))));
          },
          random_tensor({4, 4, 2}, rng)}},
    };
    for (const auto& [name, fc] : cases) {
      INFO(std::string(name) << " trial " << trial);
      CHECK(finite_difference_check(fc.first, fc.second, kStep) < kTol);
    }
  }
}

TEST_CASE("attention kernels and masked softmax match central differences") {
  std::mt19937_64 rng(77);
  const Index heads = 2, n = 3, m = 4, d = 4;
  BoolMatrix mask(n, m);
  mask << true, false, true, true,  //
      false, true, true, false,     //
      true, true, false, true;
  std::vector<BoolMatrix> masks{mask};
  for (int trial = 0; trial < 10; ++trial) {
    const T q = random_tensor({n, d}, rng);
    const T k = random_tensor({m, d}, rng);
    const T v = random_tensor({m, d}, rng);
    const T p = random_tensor({heads, n, m}, rng);
    const T probe = random_tensor({n, d}, rng);
    auto c = [](const V& ref, const T& t) { return ref.tape().constant(t); };
    std::vector<std::pair<const char*, std::pair<Fn, T>>> cases = {
        {"scores/q", {[&](const V& x) { return sum(mul(attention_scores(x, c(x, k), heads), c(x, p))); }, q}},
        {"scores/k", {[&](const V& x) { return sum(mul(attention_scores(c(x, q), x, heads), c(x, p))); }, k}},
        {"combine/p", {[&](const V& x) { return sum(mul(attention_combine(x, c(x, v)), c(x, probe))); }, p}},
        {"combine/v", {[&](const V& x) { return sum(mul(attention_combine(c(x, p), x), c(x, probe))); }, v}},
        {"masked_softmax", {[&](const V& x) { return sum(mul(masked_softmax(x, masks), c(x, p))); }, p}},
        {"attention",
         {[&](const V& x) {
            auto probs = masked_softmax(attention_scores(x, x, heads), {});
            return sum(mul(attention_combine(probs, x), c(x, probe)));
          },
          q}},
    };
    for (const auto& [name, fc] : cases) {
      INFO(std::string(name) << " trial " << trial);
      CHECK(finite_difference_check(fc.first, fc.second, kStep) < kTol);
    }
  }
}

TEST_CASE("single precision gradients within the looser tolerance") {
  std::mt19937_64 rng(8);
  using F = DenseTensor<float>;
  const F x = random_tensor<float>({3, 4}, rng);
  const F w = random_tensor<float>({4, 4}, rng);
  const F g = F::filled({4}, 1.0f);
  const F z(Shape{4});
  std::function<Var<float>(const Var<float>&)> f = [&](const Var<float>& v) {
    auto& t = v.tape();
    return sum(relu(layer_norm(linear(v, t.constant(w), t.constant(z)), t.constant(g), t.constant(z), 1e-5f)));
  };
  CHECK(finite_difference_check(f, x, 1e-2f, 1e-2f) < 1e-2f);
}

TEST_CASE("tape: backward replays every recorded op exactly once in reverse") {
  Tape<double> tape;
  std::mt19937_64 rng(4);
  auto x = tape.variable(random_tensor({2, 3}, rng));
  auto c = tape.constant(random_tensor({2, 3}, rng));
  auto y = relu(add(x, c));
  auto z = sum(mul(y, y));
  auto unrelated = tape.variable(random_tensor({2}, rng));
  (void)scale(unrelated, 2.0);
  const auto log = tape.record_log();
  REQUIRE(log.size() == 5);
  CHECK(log[0].name == "add");
  CHECK(log[3].name == "sum");
  CHECK(log[3].output == z.id());
  CHECK(tape.backward(z) == 5);
  CHECK(unrelated.grad().isZero());
}

TEST_CASE("tape: constants do not record ops; non-finite values are rejected") {
  Tape<double> tape;
  auto a = tape.constant(T::filled({2}, 1.0));
  (void)add(a, a);
  CHECK(tape.op_count() == 0);
  T bad(Shape{2});
  bad[1] = std::nan("");
  CHECK_THROWS_AS(tape.constant(bad), NumericError);
  auto big = tape.constant(T::filled({1}, 1e308));
  CHECK_THROWS_AS(scale(big, 10.0), NumericError);
}

TEST_CASE("svd3: worked examples") {
  auto id = svd3<double>(Mat3<double>::Identity());
  CHECK(id.singular_values.isApprox(Vec3<double>(1, 1, 1)));
  CHECK((id.u.cwiseAbs() - Mat3<double>::Identity()).norm() < 1e-12);
  CHECK((id.v.cwiseAbs() - Mat3<double>::Identity()).norm() < 1e-12);

  auto diag = svd3<double>(Vec3<double>(3, 2, 1).asDiagonal().toDenseMatrix());
  CHECK((diag.singular_values - Vec3<double>(3, 2, 1)).norm() < 1e-14);

  Mat3<double> scrambled = Vec3<double>(1, 3, 2).asDiagonal().toDenseMatrix();
  auto sorted = svd3<double>(scrambled);
  CHECK((sorted.singular_values - Vec3<double>(3, 2, 1)).norm() < 1e-14);

  auto zero = svd3<double>(Mat3<double>::Zero());
  CHECK(zero.singular_values.isZero());
  CHECK((zero.u.transpose() * zero.u - Mat3<double>::Identity()).norm() < 1e-12);
}

TEST_CASE("svd3: reconstruction and orthogonality on 1000 random matrices") {
  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<int> kind(0, 3);
  double worst_rec = 0, worst_orth = 0;
  for (int i = 0; i < 1000; ++i) {
    Mat3<double> m = random_matrix(3, 3, rng);
    switch (kind(rng)) {
      case 1:  // rank 2
        m = random_matrix(3, 2, rng) * random_matrix(2, 3, rng);
        break;
      case 2:  // rank 1
        m = random_matrix(3, 1, rng) * random_matrix(1, 3, rng);
        break;
      case 3:  // repeated singular values
        m = Eigen::AngleAxisd(0.3 * i, Vec3<double>(1, 2, 3).normalized()).toRotationMatrix() * 2.5;
        break;
      default:
        break;
    }
    auto s = svd3<double>(m);
    const Mat3<double> rec = s.u * s.singular_values.asDiagonal() * s.v.transpose();
    worst_rec = std::max(worst_rec, (rec - m).cwiseAbs().maxCoeff());
    worst_orth = std::max(worst_orth, (s.u.transpose() * s.u - Mat3<double>::Identity()).cwiseAbs().maxCoeff());
    worst_orth = std::max(worst_orth, (s.v.transpose() * s.v - Mat3<double>::Identity()).cwiseAbs().maxCoeff());
    CHECK(s.singular_values[0] >= s.singular_values[1]);
    CHECK(s.singular_values[1] >= s.singular_values[2]);
    CHECK(s.singular_values[2] >= 0.0);
  }
  CHECK(worst_rec < 1e-8);
  CHECK(worst_orth < 1e-8);
}

TEST_CASE("svd3: non-finite input is a numeric error") {
  Mat3<double> m = Mat3<double>::Identity();
  m(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(svd3<double>(m), NumericError);
}
