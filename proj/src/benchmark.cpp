// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/benchmark.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "fastmetro/format.hpp"
#include "fastmetro/model.hpp"

namespace fastmetro {
namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
std::pair<double, double> time_ms(Index iters, Index warmup, Fn&& fn) {
  for (Index i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (Index i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  double mean = 0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  double var = 0;
  for (double v : ms) var += (v - mean) * (v - mean);
  return {mean, ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0};
}

DenseTensor<double> random_input(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseTensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

}  // namespace

MeshTopology make_benchmark_topology(Index joints, Index coarse, Index fine) {
  if (coarse < 3 || fine < coarse || joints < 1 || joints > fine) {
    throw ConfigError("benchmark topology needs 3 <= N <= M and 1 <= K <= M");
  }
  std::vector<Face> faces;
  for (Index i = 0; i + 2 < coarse; ++i) faces.push_back(i % 2 == 0 ? Face{i, i + 1, i + 2} : Face{i + 1, i, i + 2});
  const TriangleMesh strip(coarse, faces);

  std::vector<Triplet> up;
  for (Index j = 0; j < fine; ++j) {
    if (j < coarse) {
      up.push_back({j, j, 1.0});
    } else {
      const Index a = (j - coarse) % (coarse - 1);
      up.push_back({j, a, 0.5});
      up.push_back({j, a + 1, 0.5});
    }
  }
  std::vector<Triplet> reg;
  for (Index k = 0; k < joints; ++k) {
    const Index lo = k * fine / joints, hi = (k + 1) * fine / joints;
    for (Index j = lo; j < hi; ++j) reg.push_back({k, j, 1.0 / static_cast<double>(hi - lo)});
  }
  MeshTopology topo{build_adjacency(strip), SparseMatrix(fine, coarse, std::move(up)),
                    SparseMatrix(joints, fine, std::move(reg))};
  topo.validate();
  return topo;
}

BenchmarkResult benchmark_forward(const ModelConfig& config, Index batch, Index iters, Index warmup,
                                  std::uint64_t seed) {
  if (batch < 1 || iters < 1 || warmup < 0) throw ConfigError("benchmark needs batch >= 1 and iters >= 1");
  const FastMetro<double> model(
      config, make_benchmark_topology(config.joints, config.coarse_vertices, config.fine_vertices), seed);
  std::mt19937_64 rng(seed);
  std::vector<DenseTensor<double>> images;
  for (Index b = 0; b < batch; ++b) {
    images.push_back(random_input({config.image_h, config.image_w, config.image_channels}, rng));
  }
  const auto [mean, sd] = time_ms(iters, warmup, [&] {
    for (const auto& img : images) model.predict(img);
  });
  BenchmarkResult r;
  r.batch = batch;
  r.iterations = iters;
  r.mean_ms = mean / static_cast<double>(batch);
  r.stddev_ms = sd / static_cast<double>(batch);
  r.throughput = 1000.0 * static_cast<double>(batch) / mean;
  return r;
}

std::vector<SweepPoint> benchmark_token_sweep(const ModelConfig& config, const std::vector<Index>& tokens, Index iters,
                                              Index warmup, std::uint64_t seed) {
  if (iters < 1) throw ConfigError("token sweep needs iters >= 1");
  const FastMetro<double> model(
      config, make_benchmark_topology(config.joints, config.coarse_vertices, config.fine_vertices), seed);
  const Index d = config.stage_dims.front();
  std::mt19937_64 rng(seed);
  std::vector<SweepPoint> out;
  for (Index t : tokens) {
    if (t < 2) throw ConfigError("token sweep lengths must be at least 2");
    const auto camera = random_input({1, d}, rng);
    const auto image = random_input({t - 1, d}, rng);
    const auto [mean, sd] = time_ms(iters, warmup, [&] {
      Tape<double> tape(false);
      ForwardContext<double> ctx(model.parameters(), tape);
      model.encode(ctx, 0, tape.constant(image), tape.constant(camera));
    });
    out.push_back({t, mean, sd});
  }
  return out;
}

std::string format_benchmark(const BenchmarkResult& r) {
  std::ostringstream s;
  s << "batch " << r.batch << ", " << r.iterations << " iterations: " << format_double(r.mean_ms) << " ms/forward"
    << " (stddev " << format_double(r.stddev_ms) << "), " << format_double(r.throughput) << " samples/s\n";
  return s.str();
}

std::string format_sweep(const std::vector<SweepPoint>& points) {
  std::ostringstream s;
  s << "tokens,mean_ms,stddev_ms\n";
  for (const auto& p : points) s << p.tokens << ',' << format_double(p.mean_ms) << ',' << format_double(p.stddev_ms) << '\n';
  return s.str();
}

}  // namespace fastmetro
