// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include "fastmetro/benchmark.hpp"
#include "fastmetro/checkpoint.hpp"
#include "fastmetro/config_json.hpp"
#include "fastmetro/dataset.hpp"
#include "fastmetro/format.hpp"
#include "fastmetro/param_count.hpp"
#include "fastmetro/trainer.hpp"

#ifndef FASTMETRO_BUILD_ID
#define FASTMETRO_BUILD_ID "unknown"
#endif

namespace fastmetro {
namespace fs = std::filesystem;

RunConfig load_run_config(const std::string& spec) {
  RunConfig rc;
  if (spec == "S" || spec == "M" || spec == "L") {
    rc.model = ModelConfig::variant(spec);
    return rc;
  }
  std::ifstream in(spec);
  if (!in) throw ConfigError("config '" + spec + "' is neither S, M, L nor a readable file");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(spec + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(spec + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      rc.model = model_config_from_json(value);
    } else if (key == "train") {
      rc.train = train_config_from_json(value);
    } else {
      throw ConfigError(spec + ": unknown run config key '" + key + "'");
    }
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// run_manifest JSON: written with status "running" before a command does
/// any work, then rewritten with the final status.
class RunManifest {
 public:
  RunManifest(fs::path path, Json fields) : path_(std::move(path)), doc_(std::move(fields)) {
    doc_["timestamp"] = utc_timestamp();
    doc_["build_id"] = FASTMETRO_BUILD_ID;
    doc_["status"] = "running";
    write();
  }

  void finish(const std::string& status, const std::string& error = {}) {
    doc_["status"] = status;
    if (!error.empty()) doc_["error"] = error;
    write();
  }

 private:
  void write() const {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    write_file(path_, doc_.dump(2) + "\n");
  }

  fs::path path_;
  Json doc_;
};

struct Session {
  std::ostream& out;
  std::vector<std::string> args;
  std::string manifest_override;
  std::optional<RunManifest> manifest;

  /// Manifest next to the primary output, or in the working directory for
  /// commands without one.
  void start(const std::string& command, const fs::path& output, const std::string& config, std::uint64_t seed) {
    fs::path path = manifest_override;
    if (path.empty()) {
      if (output.empty()) {
        path = "run_manifest.json";
      } else {
        fs::path base = output;
        if (!base.has_filename()) base = base.parent_path();
        path = base;
        path += ".run_manifest.json";
      }
    }
    manifest.emplace(path, Json{{"command", command},
                                {"args", args},
                                {"config", config},
                                {"output", output.string()},
                                {"seed", seed}});
  }
};

void check_dataset_fits(const ModelConfig& model, const Dataset& ds) {
  check_topology(model, ds.mesh.topology);
  if (ds.config.image_h != model.image_h || ds.config.image_w != model.image_w || model.image_channels != 1) {
    throw ConfigError("model expects " + std::to_string(model.image_h) + "x" + std::to_string(model.image_w) + "x" +
                      std::to_string(model.image_channels) + " images but the dataset has " +
                      std::to_string(ds.config.image_h) + "x" + std::to_string(ds.config.image_w) + "x1");
  }
}

std::string metrics_line(const SampleMetrics& m) {
  return "MPJPE " + format_double(m.mpjpe) + " mm, PA-MPJPE " + format_double(m.pa_mpjpe) + " mm, MPVPE " +
         format_double(m.mpvpe) + " mm";
}

std::string token_names(Index joints, Index vertices) {
  std::string s;
  for (Index k = 0; k < joints; ++k) s += ",j" + std::to_string(k);
  for (Index v = 0; v < vertices; ++v) s += ",v" + std::to_string(v);
  return s;
}

void write_or_throw(std::ofstream& f, const fs::path& path) {
  if (!f) throw DataError("failed writing " + path.string());
}

// --- commands ---------------------------------------------------------------

struct GenDataArgs {
  std::string mesh, out;
  SyntheticConfig data;
};

int gen_data(Session& s, const GenDataArgs& a) {
  a.data.validate();
  const TriangleMesh mesh = load_obj(a.mesh);
  Dataset ds{a.data, prepare_synthetic_mesh(mesh, a.data), {}};
  s.start("gen-data", a.out, a.mesh, a.data.seed);
  ds.samples = generate_dataset(ds.mesh, a.data);
  save_dataset(a.out, ds);
  s.out << "wrote " << ds.samples.size() << " samples to " << a.out << " (K=" << ds.mesh.topology.joints()
        << ", N=" << ds.mesh.topology.coarse_vertices() << ", M=" << ds.mesh.topology.fine_vertices() << ", "
        << a.data.image_h << "x" << a.data.image_w << " images)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<Index> epochs;
};

int train(Session& s, const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  rc.train.validate();
  const Dataset ds = load_dataset(a.data);
  check_dataset_fits(rc.model, ds);
  const fs::path out = a.out;
  fs::create_directories(out);
  s.start("train", out, a.config, rc.train.seed);
  write_file(out / "run_config.json",
             Json{{"model", to_json(rc.model)}, {"train", to_json(rc.train)}}.dump(2) + "\n");

  FastMetro<double> model(rc.model, ds.mesh.topology, rc.train.seed);
  Trainer<double> trainer(model, rc.train);
  std::ofstream log(out / "train_log.csv", std::ios::binary);
  log << training_log_header() << '\n';
  Index best_epoch = 0;
  double best_score = 0;
  TrainHooks hooks;
  hooks.diagnostic_path = out / "diagnostics.txt";
  hooks.on_epoch = [&](const EpochLog& e) {
    log << training_log_row(e) << '\n';
    log.flush();
    write_or_throw(log, out / "train_log.csv");
    s.out << "epoch " << e.epoch << ": loss " << format_double(e.train_loss.total);
    if (e.has_train_metrics) s.out << ", train PA-MPJPE " << format_double(e.train_metrics.pa_mpjpe);
    if (e.has_holdout) s.out << ", holdout PA-MPJPE " << format_double(e.holdout_metrics.pa_mpjpe);
    s.out << '\n';
  };
  hooks.on_best = [&](const EpochLog& e) {
    best_epoch = e.epoch;
    best_score = e.has_holdout ? e.holdout_metrics.pa_mpjpe : e.train_metrics.pa_mpjpe;
    save_checkpoint(out / "best.ckpt", model, &trainer.optimizer());
  };
  trainer.train(ds.samples, hooks);
  save_checkpoint(out / "final.ckpt", model, &trainer.optimizer());
  s.out << "best epoch " << best_epoch << " (PA-MPJPE " << format_double(best_score) << " mm) saved to "
        << (out / "best.ckpt").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, report;
};

int eval(Session& s, const EvalArgs& a) {
  const ModelConfig config = read_checkpoint_config(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  check_dataset_fits(config, ds);
  s.start("eval", a.report, a.checkpoint, 0);
  FastMetro<double> model(config, ds.mesh.topology, 0);
  load_checkpoint(a.checkpoint, model);
  const auto rows = evaluate_metrics(model, to_training_samples<double>(ds.samples));
  write_eval_report(a.report, rows);
  s.out << "evaluated " << rows.size() << " samples: " << metrics_line(mean_metrics(rows)) << '\n';
  return kExitOk;
}

int audit(Session& s, const std::string& spec) {
  const RunConfig rc = load_run_config(spec);
  s.start("audit", {}, spec, 0);
  s.out << format_parameter_table(count_parameters(rc.model));
  return kExitOk;
}

struct BenchArgs {
  std::string config, out;
  Index batch = 1, iters = 10, warmup = 1;
  bool sweep = false;
  std::vector<Index> tokens{64, 128, 256, 512};
  std::uint64_t seed = 0;
};

int bench(Session& s, const BenchArgs& a) {
  const RunConfig rc = load_run_config(a.config);
  if (a.batch < 1 || a.iters < 1 || a.warmup < 0) throw ConfigError("--batch and --iters must be positive");
  s.start("bench", a.out, a.config, a.seed);
  s.out << format_benchmark(benchmark_forward(rc.model, a.batch, a.iters, a.warmup, a.seed));
  if (a.sweep) {
    const std::string table = format_sweep(benchmark_token_sweep(rc.model, a.tokens, a.iters, a.warmup, a.seed));
    s.out << table;
    if (!a.out.empty()) write_file(a.out, table);
  }
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint, data, out;
  Index sample = 0;
};

int export_attention(Session& s, const ExportArgs& a) {
  const ModelConfig config = read_checkpoint_config(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  check_dataset_fits(config, ds);
  if (a.sample < 0 || a.sample >= static_cast<Index>(ds.samples.size())) {
    throw ConfigError("sample " + std::to_string(a.sample) + " is out of range for " +
                      std::to_string(ds.samples.size()) + " samples");
  }
  FastMetro<double> model(config, ds.mesh.topology, 0);
  load_checkpoint(a.checkpoint, model);
  const fs::path out = a.out;
  fs::create_directories(out);
  s.start("export-attention", out, a.checkpoint, 0);

  AttentionTrace<double> trace;
  const auto pred = model.predict(ds.samples[static_cast<std::size_t>(a.sample)].image, &trace);
  const Index k = config.joints, n = config.coarse_vertices, tokens = k + n, heads = config.num_heads;
  const Index cells = config.grid_cells();
  const double layers = static_cast<double>(trace.self_attention.size());

  RowMatX<double> self_mean = RowMatX<double>::Zero(tokens, tokens);
  RowMatX<double> cross_mean = RowMatX<double>::Zero(tokens, cells);
  for (std::size_t l = 0; l < trace.self_attention.size(); ++l) {
    for (Index h = 0; h < heads; ++h) {
      self_mean += Eigen::Map<const RowMatX<double>>(trace.self_attention[l].data() + h * tokens * tokens, tokens, tokens);
      cross_mean += Eigen::Map<const RowMatX<double>>(trace.cross_attention[l].data() + h * tokens * cells, tokens, cells);
    }
  }
  self_mean /= layers * static_cast<double>(heads);
  cross_mean /= layers * static_cast<double>(heads);

  {
    const fs::path path = out / "self_attention.csv";
    std::ofstream f(path, std::ios::binary);
    f << "query" << token_names(k, n) << '\n';
    for (Index q = 0; q < k; ++q) {
      f << 'j' << q;
      for (Index c = 0; c < tokens; ++c) f << ',' << format_double(self_mean(q, c));
      f << '\n';
    }
    write_or_throw(f, path);
  }
  {
    const fs::path path = out / "cross_attention.csv";
    std::ofstream f(path, std::ios::binary);
    f << "joint,row,col,score\n";
    for (Index q = 0; q < k; ++q) {
      for (Index c = 0; c < cells; ++c) {
        f << q << ',' << c / config.grid_w << ',' << c % config.grid_w << ',' << format_double(cross_mean(q, c)) << '\n';
      }
    }
    write_or_throw(f, path);
  }
  // Heads that carry a topology mask, from the final decoder layer, unaveraged
  // so masked pairs stay exact zeros.
  std::vector<Index> masked;
  const auto& masks = model.masks();
  for (Index h = 0; h < heads && !masks.empty(); ++h) {
    const auto& m = masks.size() == 1 ? masks[0] : masks[static_cast<std::size_t>(h)];
    if (!m.all()) masked.push_back(h);
  }
  if (!masked.empty()) {
    const fs::path path = out / "self_attention_masked_heads.csv";
    std::ofstream f(path, std::ios::binary);
    f << "head,query" << token_names(k, n) << '\n';
    const auto& last = trace.self_attention.back();
    for (Index h : masked) {
      for (Index q = 0; q < tokens; ++q) {
        f << h << ',' << (q < k ? "j" + std::to_string(q) : "v" + std::to_string(q - k));
        for (Index c = 0; c < tokens; ++c) f << ',' << format_double(last[(h * tokens + q) * tokens + c]);
        f << '\n';
      }
    }
    write_or_throw(f, path);
  }
  save_ply(out / "mesh.ply", pred.fine_vertices3d, ds.mesh.fine.faces());
  s.out << "exported attention for sample " << a.sample << " (" << trace.self_attention.size()
        << " decoder layers, " << masked.size() << " masked heads) and a " << pred.fine_vertices3d.rows()
        << "-vertex mesh to " << out.string() << '\n';
  return kExitOk;
}

struct MaskStudyArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<Index> epochs;
};

int mask_study(Session& s, const MaskStudyArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  rc.train.validate();
  const Dataset ds = load_dataset(a.data);
  check_dataset_fits(rc.model, ds);
  const fs::path out = a.out;
  fs::create_directories(out);
  s.start("mask-study", out, a.config, rc.train.seed);
  const auto rows = run_mask_study(rc.model, ds.mesh.topology, ds.samples, rc.train, rc.train.seed);
  write_mask_study(out / "mask_study.csv", rows);
  const auto& last = rows.back();
  s.out << "epoch " << last.epoch << ": loss full " << format_double(last.loss_full) << ", off "
        << format_double(last.loss_off) << "; PA-MPJPE full " << format_double(last.pa_mpjpe_full) << ", off "
        << format_double(last.pa_mpjpe_off) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FastMETRO mesh regressor: data generation, training, evaluation and diagnostics", "fastmetro"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --manifest follow the subcommand
  Session session{out, args, {}, {}};
  app.add_option("--manifest", session.manifest_override, "Where to write run_manifest JSON");
  std::function<int()> action;

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset from a mesh");
  g->add_option("--mesh", gen.mesh, "Coarse mesh (OBJ)")->required();
  g->add_option("--out", gen.out, "Dataset directory")->required();
  g->add_option("--count", gen.data.count, "Number of samples")->capture_default_str();
  g->add_option("--seed", gen.data.seed, "Generator seed")->capture_default_str();
  g->add_option("--joints", gen.data.joints, "Joints regressed from the fine mesh")->capture_default_str();
  g->add_option("--deformation", gen.data.deformation, "Mode amplitude as a fraction of the radius")
      ->capture_default_str();
  g->add_option("--modes", gen.data.modes, "Sinusoidal displacement modes")->capture_default_str();
  g->callback([&] { action = [&] { return gen_data(session, gen); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train on a dataset");
  t->add_option("--config", tr.config, "S, M, L or a run config JSON file")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Overrides the training seed");
  t->add_option("--epochs", tr.epochs, "Overrides the epoch count");
  t->callback([&] { action = [&] { return train(session, tr); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--report", ev.report, "Per-sample metrics CSV")->required();
  e->callback([&] { action = [&] { return eval(session, ev); }; });

  std::string audit_config;
  auto* au = app.add_subcommand("audit", "Print the parameter budget of a config");
  au->add_option("--config", audit_config, "S, M, L or a run config JSON file")->required();
  au->callback([&] { action = [&] { return audit(session, audit_config); }; });

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Time inference forward passes");
  b->add_option("--config", be.config, "S, M, L or a run config JSON file")->required();
  b->add_option("--batch", be.batch)->capture_default_str();
  b->add_option("--iters", be.iters)->capture_default_str();
  b->add_option("--warmup", be.warmup)->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();
  b->add_flag("--sweep", be.sweep, "Also time the first encoder stack over a token sweep");
  b->add_option("--tokens", be.tokens, "Sweep lengths")->delimiter(',')->capture_default_str();
  b->add_option("--out", be.out, "Sweep CSV");
  b->callback([&] { action = [&] { return bench(session, be); }; });

  ExportArgs ex;
  auto* x = app.add_subcommand("export-attention", "Export attention maps and the estimated mesh for one sample");
  x->add_option("--checkpoint", ex.checkpoint)->required();
  x->add_option("--data", ex.data)->required();
  x->add_option("--sample", ex.sample)->capture_default_str();
  x->add_option("--out", ex.out, "Output directory")->required();
  x->callback([&] { action = [&] { return export_attention(session, ex); }; });

  MaskStudyArgs ms;
  auto* m = app.add_subcommand("mask-study", "Train with and without the topology mask and pair the curves");
  m->add_option("--config", ms.config, "S, M, L or a run config JSON file")->required();
  m->add_option("--data", ms.data)->required();
  m->add_option("--out", ms.out, "Output directory")->required();
  m->add_option("--seed", ms.seed);
  m->add_option("--epochs", ms.epochs);
  m->callback([&] { action = [&] { return mask_study(session, ms); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return kExitInvalid;
  }

  auto fail = [&](int code, const std::string& msg) {
    err << "error: " << msg << '\n';
    if (session.manifest) {
      try {
        session.manifest->finish("failed", msg);
      } catch (const std::exception& e2) {
        err << "error: could not update run manifest: " << e2.what() << '\n';
      }
    }
    return code;
  };
  try {
    const int code = action();
    if (session.manifest) session.manifest->finish("ok");
    return code;
  } catch (const ConfigError& e2) {
    return fail(kExitInvalid, e2.what());
  } catch (const DataError& e2) {
    return fail(kExitInvalid, e2.what());
  } catch (const DimensionError& e2) {
    return fail(kExitInvalid, e2.what());
  } catch (const std::exception& e2) {
    return fail(kExitRuntime, e2.what());
  }
}

}  // namespace fastmetro
