// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/trainer.hpp"

#include <fstream>

#include "fastmetro/format.hpp"

namespace fastmetro {

std::string training_log_header() {
  return "epoch,loss,loss_vertex,loss_joint,loss_joint2d,grad_norm,train_mpjpe,train_pa_mpjpe,train_mpvpe,"
         "holdout_mpjpe,holdout_pa_mpjpe,holdout_mpvpe";
}

std::string training_log_row(const EpochLog& e) {
  auto opt = [](bool has, double v) { return has ? format_double(v) : std::string(); };
  std::string row = std::to_string(e.epoch);
  for (double v : {e.train_loss.total, e.train_loss.vertex, e.train_loss.joint, e.train_loss.joint2d, e.grad_norm}) {
    row += "," + format_double(v);
  }
  row += "," + opt(e.has_train_metrics, e.train_metrics.mpjpe) + "," + opt(e.has_train_metrics, e.train_metrics.pa_mpjpe) +
         "," + opt(e.has_train_metrics, e.train_metrics.mpvpe);
  row += "," + opt(e.has_holdout, e.holdout_metrics.mpjpe) + "," + opt(e.has_holdout, e.holdout_metrics.pa_mpjpe) + "," +
         opt(e.has_holdout, e.holdout_metrics.mpvpe);
  return row;
}

std::vector<MaskStudyRow> run_mask_study(const ModelConfig& base, const MeshTopology& topology,
                                         const std::vector<SyntheticSample>& samples, const TrainConfig& train,
                                         std::uint64_t model_seed) {
  std::vector<std::vector<EpochLog>> logs;
  for (MaskMode mode : {MaskMode::full, MaskMode::off}) {
    ModelConfig c = base;
    c.mask_mode = mode;
    FastMetro<double> model(c, topology, model_seed);
    TrainConfig t = train;
    t.eval_train = true;
    Trainer<double> trainer(model, t);
    logs.push_back(trainer.train(samples));
  }
  std::vector<MaskStudyRow> rows;
  for (std::size_t i = 0; i < logs[0].size(); ++i) {
    rows.push_back({logs[0][i].epoch, logs[0][i].train_loss.total, logs[1][i].train_loss.total,
                    logs[0][i].train_metrics.pa_mpjpe, logs[1][i].train_metrics.pa_mpjpe});
  }
  return rows;
}

void write_mask_study(const std::filesystem::path& path, const std::vector<MaskStudyRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,loss_full,loss_off,pa_mpjpe_full,pa_mpjpe_off\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_double(r.loss_full) << ',' << format_double(r.loss_off) << ','
        << format_double(r.pa_mpjpe_full) << ',' << format_double(r.pa_mpjpe_off) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace fastmetro
