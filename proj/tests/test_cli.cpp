// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "fastmetro/cli.hpp"
#include "fastmetro/config_json.hpp"
#include "fastmetro/serialization.hpp"

using namespace fastmetro;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = FASTMETRO_SOURCE_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<double> csv_numbers(const std::string& line, std::size_t skip) {
  std::vector<double> v;
  std::stringstream ss(line);
  std::string cell;
  for (std::size_t i = 0; std::getline(ss, cell, ','); ++i) {
    if (i >= skip) v.push_back(std::stod(cell));
  }
  return v;
}

Json manifest(const fs::path& path) { return Json::parse(read_file(path)); }

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "fastmetro_cli_test";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

void write_config(const std::string& path, const std::string& mask_mode, int epochs) {
  std::ofstream(path) << R"({"model": {"stage_dims": [32, 16], "joints": 4, "coarse_vertices": 10,
    "fine_vertices": 34, "backbone_channels": 24, "backbone_hidden": 16, "output_scale": 100.0,
    "mask_mode": ")" << mask_mode
                      << R"("}, "train": {"batch_size": 4, "epochs": )" << epochs
                      << R"(, "holdout_fraction": 0.0}})";
}

}  // namespace

TEST_CASE("run configs") {
  const RunConfig s = load_run_config("S");
  CHECK(s.model.stage_dims == std::vector<Index>{512, 128});
  CHECK(s.model.enc_layers_per_stage == std::vector<Index>{1, 1});
  CHECK(s.model.dec_layers_per_stage == std::vector<Index>{1, 1});
  CHECK(load_run_config("L").model.enc_layers_per_stage == std::vector<Index>{3, 3});

  Workspace ws;
  std::ofstream(ws / "bad.json") << R"({"model": {}, "extra": 1})";
  CHECK_THROWS_WITH_AS(load_run_config(ws / "bad.json"), doctest::Contains("extra"), ConfigError);
  std::ofstream(ws / "typo.json") << R"({"model": {"num_head": 4}})";
  CHECK_THROWS_WITH_AS(load_run_config(ws / "typo.json"), doctest::Contains("num_head"), ConfigError);
  std::ofstream(ws / "broken.json") << "{";
  CHECK_THROWS_AS(load_run_config(ws / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(ws / "missing.json"), ConfigError);
  const RunConfig shipped = load_run_config((kRoot / "configs" / "tetra_overfit.json").string());
  CHECK(shipped.model.joints == 4);
  CHECK(shipped.train.epochs == 300);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == kExitInvalid);
  CHECK(cli({"frobnicate"}).code == kExitInvalid);
  CHECK(cli({"gen-data", "--out", "x"}).code == kExitInvalid);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("audit reports the published budgets") {
  Workspace ws;
  const Run s = cli({"audit", "--config", "S", "--manifest", ws / "m.json"});
  REQUIRE(s.code == kExitOk);
  CHECK(s.out.find("9294470") != std::string::npos);
  CHECK(manifest(ws / "m.json").at("status") == "ok");
  CHECK(cli({"audit", "--config", "L", "--manifest", ws / "m.json"}).out.find("24932998") != std::string::npos);
}

TEST_CASE("gen-data, train, eval and export round trip") {
  Workspace ws;
  const std::string mesh = (kRoot / "data" / "tetra.obj").string();
  auto gen = [&](const std::string& out, const std::string& count) {
    return cli({"gen-data", "--mesh", mesh, "--out", out, "--count", count, "--seed", "5", "--joints", "4"});
  };
  REQUIRE(gen(ws / "data", "8").code == kExitOk);
  REQUIRE(gen(ws / "again", "8").code == kExitOk);
  for (const auto& entry : fs::recursive_directory_iterator(ws.dir / "data")) {
    if (!entry.is_regular_file()) continue;
    const fs::path twin = ws.dir / "again" / fs::relative(entry.path(), ws.dir / "data");
    CHECK_MESSAGE(read_file(entry.path()) == read_file(twin), entry.path().string());
  }
  Index blobs = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(ws.dir / "data" / "samples")) ++blobs;
  CHECK(blobs == 8);
  CHECK(manifest(ws / "data.run_manifest.json").at("status") == "ok");
  CHECK(manifest(ws / "data.run_manifest.json").at("seed") == 5);

  const Run zero = gen(ws / "empty", "0");
  CHECK(zero.code == kExitInvalid);
  CHECK_FALSE(fs::exists(ws.dir / "empty"));

  write_config(ws / "run.json", "full", 2);
  const Run tr = cli({"train", "--config", ws / "run.json", "--data", ws / "data", "--out", ws / "run"});
  REQUIRE_MESSAGE(tr.code == kExitOk, tr.err);
  CHECK(fs::exists(ws.dir / "run" / "best.ckpt"));
  CHECK(lines(ws.dir / "run" / "train_log.csv").size() == 4);
  CHECK(manifest(ws / "run.run_manifest.json").at("command") == "train");

  const Run ev = cli({"eval", "--checkpoint", ws / "run/best.ckpt", "--data", ws / "data", "--report", ws / "r.csv"});
  REQUIRE_MESSAGE(ev.code == kExitOk, ev.err);
  CHECK(ev.out.find("PA-MPJPE") != std::string::npos);
  const auto report = lines(ws.dir / "r.csv");
  CHECK(report.front() == "sample_id,mpjpe,pa_mpjpe,mpvpe");
  CHECK(report.size() == 9);

  // a dataset with a different joint count does not fit the checkpoint
  REQUIRE(cli({"gen-data", "--mesh", mesh, "--out", ws / "k6", "--count", "2", "--joints", "6"}).code == kExitOk);
  const Run mismatch = cli({"eval", "--checkpoint", ws / "run/best.ckpt", "--data", ws / "k6", "--report", ws / "x.csv"});
  CHECK(mismatch.code == kExitInvalid);
  CHECK(mismatch.err.find("K=6") != std::string::npos);
  CHECK(cli({"train", "--config", "S", "--data", ws / "data", "--out", ws / "s"}).code == kExitInvalid);

  const Run ex = cli({"export-attention", "--checkpoint", ws / "run/best.ckpt", "--data", ws / "data", "--sample", "3",
                      "--out", ws / "att"});
  REQUIRE_MESSAGE(ex.code == kExitOk, ex.err);
  const auto self = lines(ws.dir / "att" / "self_attention.csv");
  REQUIRE(self.size() == 5);
  for (std::size_t q = 1; q < self.size(); ++q) {
    double sum = 0;
    for (double v : csv_numbers(self[q], 1)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-5);
  }
  // masked heads: coarse vertices 0 and 9 of the subdivided tetrahedron are
  // not adjacent (9 is the midpoint of edge 2-3, opposite vertex 0)
  const auto masked = lines(ws.dir / "att" / "self_attention_masked_heads.csv");
  REQUIRE(masked.size() == 1 + 8 * 14);
  for (std::size_t r = 1; r < masked.size(); ++r) {
    std::vector<std::string> cells;
    std::stringstream ss(masked[r]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 2 + 14);
    if (cells[1] == "v0") CHECK(std::stod(cells[2 + 4 + 9]) == 0.0);
    if (cells[1] == "v9") CHECK(std::stod(cells[2 + 4 + 0]) == 0.0);
  }
  const auto cross = lines(ws.dir / "att" / "cross_attention.csv");
  CHECK(cross.size() == 1 + 4 * 49);
  const auto ply = lines(ws.dir / "att" / "mesh.ply");
  CHECK(std::find(ply.begin(), ply.end(), "element vertex 34") != ply.end());

  const Run out_of_range = cli({"export-attention", "--checkpoint", ws / "run/best.ckpt", "--data", ws / "data",
                                "--sample", "8", "--out", ws / "att2"});
  CHECK(out_of_range.code == kExitInvalid);
  CHECK_FALSE(fs::exists(ws.dir / "att2"));
}

TEST_CASE("training failure marks the manifest and exits with 3") {
  Workspace ws;
  const std::string mesh = (kRoot / "data" / "tetra.obj").string();
  REQUIRE(cli({"gen-data", "--mesh", mesh, "--out", ws / "data", "--count", "2", "--joints", "4"}).code == kExitOk);
  // poison one image so the loss becomes non-finite
  const fs::path blob = ws.dir / "data" / "samples" / "000001.bin";
  BlockFile f = read_block_file(blob, kSampleMagic);
  for (auto& b : f.blocks) {
    if (b.name == "image") b.tensor[0] = std::numeric_limits<double>::quiet_NaN();
  }
  write_block_file(blob, kSampleMagic, f);
  write_config(ws / "run.json", "full", 1);
  const Run tr = cli({"train", "--config", ws / "run.json", "--data", ws / "data", "--out", ws / "run"});
  CHECK(tr.code == kExitRuntime);
  const Json m = manifest(ws / "run.run_manifest.json");
  CHECK(m.at("status") == "failed");
  CHECK(fs::exists(ws.dir / "run" / "diagnostics.txt"));
}

TEST_CASE("mask study and bench") {
  Workspace ws;
  const std::string mesh = (kRoot / "data" / "tetra.obj").string();
  REQUIRE(cli({"gen-data", "--mesh", mesh, "--out", ws / "data", "--count", "4", "--joints", "4"}).code == kExitOk);
  write_config(ws / "run.json", "full", 2);
  const Run ms = cli({"mask-study", "--config", ws / "run.json", "--data", ws / "data", "--out", ws / "ms"});
  REQUIRE_MESSAGE(ms.code == kExitOk, ms.err);
  const auto rows = lines(ws.dir / "ms" / "mask_study.csv");
  CHECK(rows.size() == 4);
  CHECK(rows[0] == "epoch,loss_full,loss_off,pa_mpjpe_full,pa_mpjpe_off");

  const Run b = cli({"bench", "--config", ws / "run.json", "--iters", "2", "--sweep", "--tokens", "8,16", "--out",
                     ws / "sweep.csv", "--manifest", ws / "bench.json"});
  REQUIRE_MESSAGE(b.code == kExitOk, b.err);
  CHECK(b.out.find("ms/forward") != std::string::npos);
  CHECK(lines(ws.dir / "sweep.csv").size() == 3);
  CHECK(cli({"bench", "--config", "S", "--iters", "0", "--manifest", ws / "bench.json"}).code == kExitInvalid);
}
