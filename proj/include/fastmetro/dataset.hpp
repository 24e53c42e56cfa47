// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "fastmetro/losses.hpp"
#include "fastmetro/mesh.hpp"
#include "fastmetro/tensor.hpp"

namespace fastmetro {

/// Generator settings. Coordinates are in millimetres.
struct SyntheticConfig {
  Index count = 64;
  std::uint64_t seed = 0;
  Index joints = 14;
  Index image_h = 56;
  Index image_w = 56;
  // rest mesh is centred and rescaled so its farthest vertex sits at this radius
  double radius = 100.0;
  // per-axis amplitude of each displacement mode, as a fraction of the radius
  double deformation = 0.1;
  Index modes = 3;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double translation = 20.0;  // t is uniform in [-translation, translation]^2
  double splat_sigma = 1.0;   // Gaussian splat width in pixels

  void validate() const;
  /// Half-width of the square image-plane window, large enough for every
  /// projection the generator can produce.
  double image_extent() const;
};

/// Sum of `modes` sinusoids d(p) = a sin(f <u, p> / radius + phase), with a
/// random 3-D amplitude a, unit direction u and frequency f in [1, 3].
struct DeformationField {
  std::vector<Vec3<double>> amplitude;
  std::vector<Vec3<double>> direction;
  std::vector<double> frequency;
  std::vector<double> phase;

  static DeformationField random(std::mt19937_64& rng, const SyntheticConfig& config);
  Points3<double> displace(const Points3<double>& rest, double radius) const;
};

struct WeakCamera {
  double scale = 1.0;
  Eigen::RowVector2d translation = Eigen::RowVector2d::Zero();
};

struct SyntheticSample {
  Index sample_id = 0;
  std::uint64_t deformation_seed = 0;
  DenseTensor<double> image;  // [H, W, 1]
  Points3<double> coarse_vertices3d;
  GroundTruth<double> gt;
  WeakCamera camera;
};

/// A normalized coarse mesh plus everything derived from it.
struct SyntheticMesh {
  TriangleMesh coarse;  // rest positions centred, farthest vertex at config.radius
  TriangleMesh fine;
  MeshTopology topology;
};

/// Centres and rescales `mesh`, subdivides it and builds the regressor.
/// Throws DataError if the mesh has no positions.
SyntheticMesh prepare_synthetic_mesh(const TriangleMesh& mesh, const SyntheticConfig& config);

/// s * (x, y) + t for each row.
RowMatX<double> project(const Points3<double>& points, const WeakCamera& camera);

/// Renders projected fine vertices as Gaussian splats on an H x W x 1 image.
DenseTensor<double> render_splats(const RowMatX<double>& points2d, const SyntheticConfig& config);

/// One sample from a given deformation and camera.
SyntheticSample synthesize_sample(const SyntheticMesh& mesh, const DeformationField& field, const WeakCamera& camera,
                                  const SyntheticConfig& config);

/// Sample i draws from a generator seeded with seed_seq{seed, i}.
SyntheticSample generate_sample(const SyntheticMesh& mesh, Index i, const SyntheticConfig& config);

std::vector<SyntheticSample> generate_dataset(const SyntheticMesh& mesh, const SyntheticConfig& config);

struct Dataset {
  SyntheticConfig config;
  SyntheticMesh mesh;
  std::vector<SyntheticSample> samples;
};

/// Directory layout: manifest.json, mesh.obj (coarse rest mesh), fine.obj,
/// upsample.mtx, regressor.mtx and samples/NNNNNN.bin tensor block files.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fastmetro
