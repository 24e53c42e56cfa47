// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "fastmetro/config_json.hpp"
#include "fastmetro/serialization.hpp"

namespace fastmetro {

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("dataset: " + msg); };
  if (count <= 0) fail("sample count must be positive");
  if (joints <= 0) fail("joint count must be positive");
  if (image_h <= 0 || image_w <= 0) fail("image extents must be positive");
  if (!(radius > 0.0)) fail("radius must be positive");
  if (!(deformation >= 0.0)) fail("deformation must be non-negative");
  if (modes < 0) fail("mode count must be non-negative");
  if (!(scale_min > 0.0 && scale_max >= scale_min)) fail("camera scale range must be positive and ordered");
  if (!(translation >= 0.0)) fail("translation range must be non-negative");
  if (!(splat_sigma > 0.0)) fail("splat sigma must be positive");
}

double SyntheticConfig::image_extent() const {
  const double reach = radius * (1.0 + std::sqrt(3.0) * deformation * static_cast<double>(modes));
  return scale_max * reach + translation;
}

DeformationField DeformationField::random(std::mt19937_64& rng, const SyntheticConfig& config) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(1.0, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  DeformationField f;
  for (Index m = 0; m < config.modes; ++m) {
    f.amplitude.push_back(Vec3<double>(sym(rng), sym(rng), sym(rng)) * (config.deformation * config.radius));
    Vec3<double> u(gauss(rng), gauss(rng), gauss(rng));
    if (u.norm() == 0.0) u = Vec3<double>::UnitX();
    f.direction.push_back(u.normalized());
    f.frequency.push_back(freq(rng));
    f.phase.push_back(phase(rng));
  }
  return f;
}

Points3<double> DeformationField::displace(const Points3<double>& rest, double radius) const {
  Points3<double> out = rest;
  for (std::size_t m = 0; m < amplitude.size(); ++m) {
    const VecX<double> arg = (rest * direction[m]) * (frequency[m] / radius);
    for (Index i = 0; i < rest.rows(); ++i) out.row(i) += std::sin(arg[i] + phase[m]) * amplitude[m].transpose();
  }
  return out;
}

SyntheticMesh prepare_synthetic_mesh(const TriangleMesh& mesh, const SyntheticConfig& config) {
  config.validate();
  if (!mesh.has_positions()) throw DataError("synthetic data needs a mesh with vertex positions");
  Points3<double> p = mesh.positions();
  p.rowwise() -= p.colwise().mean();
  const double far = p.rowwise().norm().maxCoeff();
  if (!(far > 0.0)) throw DataError("mesh vertices all coincide");
  p *= config.radius / far;
  TriangleMesh coarse(mesh.vertex_count(), mesh.faces(), std::move(p));
  Subdivision sub = subdivide(coarse);
  MeshTopology topo = MeshTopology::from_mesh(coarse, config.joints);
  return {std::move(coarse), std::move(sub.fine), std::move(topo)};
}

RowMatX<double> project(const Points3<double>& points, const WeakCamera& camera) {
  return (camera.scale * points.leftCols(2)).rowwise() + camera.translation;
}

DenseTensor<double> render_splats(const RowMatX<double>& points2d, const SyntheticConfig& config) {
  const Index h = config.image_h, w = config.image_w;
  const double extent = config.image_extent();
  const double sigma = config.splat_sigma;
  const Index reach = static_cast<Index>(std::ceil(4.0 * sigma));
  DenseTensor<double> image(Shape{h, w, 1});
  for (Index i = 0; i < points2d.rows(); ++i) {
    const double col = (points2d(i, 0) + extent) / (2.0 * extent) * static_cast<double>(w) - 0.5;
    const double row = (points2d(i, 1) + extent) / (2.0 * extent) * static_cast<double>(h) - 0.5;
    const Index r0 = static_cast<Index>(std::floor(row)), c0 = static_cast<Index>(std::floor(col));
    for (Index r = std::max<Index>(0, r0 - reach); r <= std::min(h - 1, r0 + reach); ++r) {
      for (Index c = std::max<Index>(0, c0 - reach); c <= std::min(w - 1, c0 + reach); ++c) {
        const double d2 = (static_cast<double>(r) - row) * (static_cast<double>(r) - row) +
                          (static_cast<double>(c) - col) * (static_cast<double>(c) - col);
        image[r * w + c] += std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  return image;
}

SyntheticSample synthesize_sample(const SyntheticMesh& mesh, const DeformationField& field, const WeakCamera& camera,
                                  const SyntheticConfig& config) {
  SyntheticSample s;
  s.camera = camera;
  s.coarse_vertices3d = field.displace(mesh.coarse.positions(), config.radius);
  s.gt.vertices3d = mesh.topology.upsample.apply(s.coarse_vertices3d);
  s.gt.joints3d = mesh.topology.regressor.apply(s.gt.vertices3d);
  s.gt.joints2d = project(s.gt.joints3d, camera);
  s.image = render_splats(project(s.gt.vertices3d, camera), config);
  return s;
}

SyntheticSample generate_sample(const SyntheticMesh& mesh, Index i, const SyntheticConfig& config) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(i)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  const std::uint64_t sample_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> scale(config.scale_min, config.scale_max);
  std::uniform_real_distribution<double> shift(-config.translation, config.translation);
  WeakCamera camera;
  camera.scale = scale(rng);
  camera.translation = Eigen::RowVector2d(shift(rng), shift(rng));
  const DeformationField field = DeformationField::random(rng, config);
  SyntheticSample s = synthesize_sample(mesh, field, camera, config);
  s.sample_id = i;
  s.deformation_seed = sample_seed;
  return s;
}

std::vector<SyntheticSample> generate_dataset(const SyntheticMesh& mesh, const SyntheticConfig& config) {
  config.validate();
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(config.count));
  for (Index i = 0; i < config.count; ++i) out.push_back(generate_sample(mesh, i, config));
  return out;
}

namespace {

constexpr const char* kDatasetFormat = "fastmetro-dataset";
constexpr int kDatasetVersion = 1;

std::string sample_file(Index i) {
  char name[32];
  std::snprintf(name, sizeof name, "samples/%06lld.bin", static_cast<long long>(i));
  return name;
}

Json generator_json(const SyntheticConfig& c) {
  return Json{{"image_h", c.image_h},         {"image_w", c.image_w},
              {"radius", c.radius},           {"deformation", c.deformation},
              {"modes", c.modes},             {"scale_min", c.scale_min},
              {"scale_max", c.scale_max},     {"translation", c.translation},
              {"splat_sigma", c.splat_sigma}};
}

BlockFile sample_blocks(const SyntheticSample& s) {
  BlockFile f;
  f.header = Json{{"sample_id", s.sample_id}, {"deformation_seed", s.deformation_seed}}.dump();
  f.blocks.push_back({"image", s.image});
  f.blocks.push_back({"coarse_vertices3d", DenseTensor<double>::from_matrix(s.coarse_vertices3d)});
  f.blocks.push_back({"vertices3d", DenseTensor<double>::from_matrix(s.gt.vertices3d)});
  f.blocks.push_back({"joints3d", DenseTensor<double>::from_matrix(s.gt.joints3d)});
  f.blocks.push_back({"joints2d", DenseTensor<double>::from_matrix(s.gt.joints2d)});
  f.blocks.push_back(
      {"camera", DenseTensor<double>(Shape{3}, Eigen::Vector3d(s.camera.scale, s.camera.translation[0],
                                                               s.camera.translation[1]))});
  return f;
}

RowMatX<double> block_matrix(const BlockFile& f, const char* name, Index rows, Index cols, const std::string& src) {
  const auto& t = f.at(name);
  if (t.shape() != Shape{rows, cols}) {
    throw DataError(src + ": block " + name + " has shape " + to_string(t.shape()) + ", expected [" +
                    std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
  return t.matrix();
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  save_obj(dir / "mesh.obj", ds.mesh.coarse);
  save_obj(dir / "fine.obj", ds.mesh.fine);
  save_matrix(dir / "upsample.mtx", ds.mesh.topology.upsample);
  save_matrix(dir / "regressor.mtx", ds.mesh.topology.regressor);
  Json files = Json::array();
  for (const auto& s : ds.samples) {
    const std::string rel = sample_file(s.sample_id);
    write_block_file(dir / rel, kSampleMagic, sample_blocks(s));
    files.push_back(rel);
  }
  const Json manifest{{"format", kDatasetFormat},
                      {"version", kDatasetVersion},
                      {"mesh", "mesh.obj"},
                      {"fine_mesh", "fine.obj"},
                      {"upsample", "upsample.mtx"},
                      {"regressor", "regressor.mtx"},
                      {"count", ds.samples.size()},
                      {"seed", ds.config.seed},
                      {"joints", ds.mesh.topology.joints()},
                      {"coarse_vertices", ds.mesh.topology.coarse_vertices()},
                      {"fine_vertices", ds.mesh.topology.fine_vertices()},
                      {"generator", generator_json(ds.config)},
                      {"samples", files}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string where = (dir / "manifest.json").string();
  Json m;
  try {
    m = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  Dataset ds;
  try {
    if (m.at("format") != kDatasetFormat || m.at("version") != kDatasetVersion) {
      throw DataError(where + ": not a version " + std::to_string(kDatasetVersion) + " dataset manifest");
    }
    auto& c = ds.config;
    c.count = m.at("count").get<Index>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.joints = m.at("joints").get<Index>();
    const Json& g = m.at("generator");
    c.image_h = g.at("image_h").get<Index>();
    c.image_w = g.at("image_w").get<Index>();
    c.radius = g.at("radius").get<double>();
    c.deformation = g.at("deformation").get<double>();
    c.modes = g.at("modes").get<Index>();
    c.scale_min = g.at("scale_min").get<double>();
    c.scale_max = g.at("scale_max").get<double>();
    c.translation = g.at("translation").get<double>();
    c.splat_sigma = g.at("splat_sigma").get<double>();
    c.validate();

    const Index k = c.joints;
    const Index n = m.at("coarse_vertices").get<Index>();
    const Index mf = m.at("fine_vertices").get<Index>();
    ds.mesh.coarse = load_obj(dir / m.at("mesh").get<std::string>());
    ds.mesh.fine = load_obj(dir / m.at("fine_mesh").get<std::string>());
    if (ds.mesh.coarse.vertex_count() != n || ds.mesh.fine.vertex_count() != mf) {
      throw DataError(where + ": mesh files disagree with the manifest vertex counts");
    }
    ds.mesh.topology.adjacency = build_adjacency(ds.mesh.coarse);
    ds.mesh.topology.upsample =
        load_matrix(dir / m.at("upsample").get<std::string>(), std::pair{mf, n}, MatrixKind::upsampling);
    ds.mesh.topology.regressor =
        load_matrix(dir / m.at("regressor").get<std::string>(), std::pair{k, mf}, MatrixKind::general);
    ds.mesh.topology.validate();

    const auto files = m.at("samples").get<std::vector<std::string>>();
    if (static_cast<Index>(files.size()) != c.count) throw DataError(where + ": sample list length differs from count");
    for (const auto& rel : files) {
      const std::string src = (dir / rel).string();
      const BlockFile f = read_block_file(dir / rel, kSampleMagic);
      const Json h = Json::parse(f.header);
      SyntheticSample s;
      s.sample_id = h.at("sample_id").get<Index>();
      s.deformation_seed = h.at("deformation_seed").get<std::uint64_t>();
      s.image = f.at("image");
      if (s.image.shape() != Shape{c.image_h, c.image_w, 1}) throw DataError(src + ": image has wrong shape");
      s.coarse_vertices3d = block_matrix(f, "coarse_vertices3d", n, 3, src);
      s.gt.vertices3d = block_matrix(f, "vertices3d", mf, 3, src);
      s.gt.joints3d = block_matrix(f, "joints3d", k, 3, src);
      s.gt.joints2d = block_matrix(f, "joints2d", k, 2, src);
      const auto& cam = f.at("camera");
      if (cam.shape() != Shape{3}) throw DataError(src + ": camera block has wrong shape");
      s.camera.scale = cam[0];
      s.camera.translation = Eigen::RowVector2d(cam[1], cam[2]);
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
  return ds;
}

}  // namespace fastmetro
