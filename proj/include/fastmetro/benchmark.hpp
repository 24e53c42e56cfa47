// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fastmetro/config.hpp"
#include "fastmetro/mesh.hpp"

namespace fastmetro {

struct BenchmarkResult {
  Index batch = 1;
  Index iterations = 0;
  double mean_ms = 0;    // per forward pass
  double stddev_ms = 0;  // over iterations
  double throughput = 0; // samples per second
};

/// Stand-in topology with the requested sizes: a triangle strip of N coarse
/// vertices, fine vertices that are the coarse ones followed by midpoints of
/// consecutive strip vertices, and K joints that average contiguous blocks
/// of fine vertices.
MeshTopology make_benchmark_topology(Index joints, Index coarse, Index fine);

/// Times `iters` iterations of `batch` inference forward passes in double
/// precision after `warmup` untimed iterations.
BenchmarkResult benchmark_forward(const ModelConfig& config, Index batch, Index iters, Index warmup = 1,
                                  std::uint64_t seed = 0);

struct SweepPoint {
  Index tokens = 0;
  double mean_ms = 0;
  double stddev_ms = 0;
};

/// Latency of the first-stage encoder stack over sequences of each length
/// in `tokens` (camera token plus tokens - 1 image tokens).
std::vector<SweepPoint> benchmark_token_sweep(const ModelConfig& config, const std::vector<Index>& tokens, Index iters,
                                              Index warmup = 1, std::uint64_t seed = 0);

std::string format_benchmark(const BenchmarkResult& r);
std::string format_sweep(const std::vector<SweepPoint>& points);

}  // namespace fastmetro
