// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "fastmetro/dataset.hpp"
#include "fastmetro/losses.hpp"
#include "fastmetro/metrics.hpp"
#include "fastmetro/model.hpp"
#include "fastmetro/optimizer.hpp"

namespace fastmetro {

/// A sample converted to the model's scalar type.
template <typename Scalar>
struct TrainingSample {
  Index sample_id = 0;
  DenseTensor<Scalar> image;
  GroundTruth<Scalar> gt;
};

template <typename Scalar>
std::vector<TrainingSample<Scalar>> to_training_samples(const std::vector<SyntheticSample>& samples) {
  std::vector<TrainingSample<Scalar>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({s.sample_id, s.image.template cast<Scalar>(),
                   {s.gt.vertices3d.template cast<Scalar>(), s.gt.joints3d.template cast<Scalar>(),
                    s.gt.joints2d.template cast<Scalar>()}});
  }
  return out;
}

struct LossSummary {
  double total = 0, vertex = 0, joint = 0, joint2d = 0;
};

struct EpochLog {
  Index epoch = 0;  // 0 is the untrained model
  LossSummary train_loss;
  double grad_norm = 0;  // mean pre-clip global norm over the epoch's steps
  bool has_train_metrics = false;
  SampleMetrics train_metrics;
  bool has_holdout = false;
  SampleMetrics holdout_metrics;
};

/// Mean loss terms over `samples` on detached tapes.
template <typename Scalar>
LossSummary evaluate_loss(const FastMetro<Scalar>& model, const std::vector<TrainingSample<Scalar>>& samples,
                          const LossWeights& weights) {
  LossSummary sum;
  for (const auto& s : samples) {
    Tape<Scalar> tape(false);
    ForwardContext<Scalar> ctx(model.parameters(), tape);
    const auto parts = compute_losses(model.forward(ctx, tape.constant(s.image)), s.gt, weights);
    sum.total += static_cast<double>(parts.total.value().item());
    sum.vertex += static_cast<double>(parts.vertex.value().item());
    sum.joint += static_cast<double>(parts.joint.value().item());
    sum.joint2d += static_cast<double>(parts.joint2d.value().item());
  }
  const double n = static_cast<double>(std::max<std::size_t>(samples.size(), 1));
  return {sum.total / n, sum.vertex / n, sum.joint / n, sum.joint2d / n};
}

/// Per-sample MPJPE and PA-MPJPE on the mesh-regressed joints and MPVPE on
/// the fine mesh.
template <typename Scalar>
std::vector<SampleMetrics> evaluate_metrics(const FastMetro<Scalar>& model,
                                            const std::vector<TrainingSample<Scalar>>& samples) {
  std::vector<SampleMetrics> rows;
  for (const auto& s : samples) {
    const auto p = model.predict(s.image);
    const RowMatX<double> joints = p.regressed_joints3d.template cast<double>();
    const RowMatX<double> gt_joints = s.gt.joints3d.template cast<double>();
    rows.push_back({s.sample_id, mpjpe(joints, gt_joints), pa_mpjpe(joints, gt_joints),
                    mpvpe<double>(p.fine_vertices3d.template cast<double>(), s.gt.vertices3d.template cast<double>())});
  }
  return rows;
}

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  // called whenever the selection PA-MPJPE improves
  std::function<void(const EpochLog&)> on_best;
  // written with batch details before a non-finite loss aborts training
  std::filesystem::path diagnostic_path;
};

/// Mini-batch AdamW training with global-norm clipping. Batch gradients are
/// the mean of per-sample gradients.
template <typename Scalar>
class Trainer {
 public:
  Trainer(FastMetro<Scalar>& model, TrainConfig config)
      : model_(model), config_(std::move(config)), optimizer_(config_, model.parameters()) {}

  AdamW<Scalar>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

  /// One optimizer step on `batch`; returns mean loss terms and the pre-clip
  /// gradient norm.
  std::pair<LossSummary, double> step(const std::vector<const TrainingSample<Scalar>*>& batch, Index epoch = 0) {
    auto& store = model_.parameters();
    store.zero_grad();
    LossSummary sum;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(batch.size());
    std::vector<std::string> trail;
    for (const auto* s : batch) {
      try {
        Tape<Scalar> tape;
        ForwardContext<Scalar> ctx(store, tape);
        const auto parts = compute_losses(model_.forward(ctx, tape.constant(s->image)), s->gt, config_.loss);
        const double total = static_cast<double>(parts.total.value().item());
        trail.push_back("sample " + std::to_string(s->sample_id) + ": total " + std::to_string(total) + ", vertex " +
                        std::to_string(static_cast<double>(parts.vertex.value().item())) + ", joint " +
                        std::to_string(static_cast<double>(parts.joint.value().item())) + ", joint2d " +
                        std::to_string(static_cast<double>(parts.joint2d.value().item())));
        if (!std::isfinite(total)) throw NumericError("non-finite loss");
        tape.backward(parts.total);
        ctx.accumulate_gradients(store, inv);
        sum.total += total;
        sum.vertex += static_cast<double>(parts.vertex.value().item());
        sum.joint += static_cast<double>(parts.joint.value().item());
        sum.joint2d += static_cast<double>(parts.joint2d.value().item());
      } catch (const NumericError& e) {
        trail.push_back("sample " + std::to_string(s->sample_id) + ": " + e.what());
        abort_step(epoch, batch, trail);
      }
    }
    const double n = static_cast<double>(batch.size());
    sum = {sum.total / n, sum.vertex / n, sum.joint / n, sum.joint2d / n};
    const double norm = static_cast<double>(clip_gradients(store, static_cast<Scalar>(config_.grad_clip_norm)));
    if (!std::isfinite(norm)) abort_step(epoch, batch, trail);
    optimizer_.step(store);
    return {sum, norm};
  }

  /// Runs config().epochs epochs. The first log entry (epoch 0) describes the
  /// untrained model. The best epoch is selected by holdout PA-MPJPE, or by
  /// training PA-MPJPE when nothing is held out.
  std::vector<EpochLog> train(const std::vector<SyntheticSample>& samples, const TrainHooks& hooks = {}) {
    if (samples.empty()) throw ConfigError("training needs at least one sample");
    const auto all = to_training_samples<Scalar>(samples);
    std::mt19937_64 rng(config_.seed);
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto held = static_cast<std::size_t>(std::floor(config_.holdout_fraction * static_cast<double>(all.size())));
    if (held >= all.size()) held = all.size() - 1;
    std::vector<TrainingSample<Scalar>> train_set, holdout;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < order.size() - held ? train_set : holdout).push_back(all[order[i]]);
    }
    std::sort(train_set.begin(), train_set.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });

    std::vector<EpochLog> log;
    double best = std::numeric_limits<double>::infinity();
    auto finish_epoch = [&](EpochLog entry) {
      const bool select_train = holdout.empty();
      try {
      if (config_.eval_train || select_train) {
        entry.has_train_metrics = true;
        entry.train_metrics = mean_metrics(evaluate_metrics(model_, train_set));
      }
      if (!holdout.empty()) {
        entry.has_holdout = true;
        entry.holdout_metrics = mean_metrics(evaluate_metrics(model_, holdout));
      }
      } catch (const NumericError& e) {
        abort_evaluation(entry.epoch, e.what());
      }
      const double score = select_train ? entry.train_metrics.pa_mpjpe : entry.holdout_metrics.pa_mpjpe;
      log.push_back(entry);
      if (hooks.on_epoch) hooks.on_epoch(entry);
      if (entry.epoch > 0 && score < best) {
        best = score;
        if (hooks.on_best) hooks.on_best(entry);
      }
    };

    hooks_ = &hooks;
    EpochLog initial;
    try {
      initial.train_loss = evaluate_loss(model_, train_set, config_.loss);
    } catch (const NumericError& e) {
      abort_evaluation(0, e.what());
    }
    finish_epoch(initial);

    std::vector<std::size_t> idx(train_set.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (Index epoch = 1; epoch <= config_.epochs; ++epoch) {
      std::shuffle(idx.begin(), idx.end(), rng);
      EpochLog entry;
      entry.epoch = epoch;
      double weight = 0;
      Index steps = 0;
      for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(config_.batch_size)) {
        std::vector<const TrainingSample<Scalar>*> batch;
        for (std::size_t j = start; j < std::min(idx.size(), start + static_cast<std::size_t>(config_.batch_size)); ++j) {
          batch.push_back(&train_set[idx[j]]);
        }
        const auto [loss, norm] = step(batch, epoch);
        const double w = static_cast<double>(batch.size());
        entry.train_loss.total += w * loss.total;
        entry.train_loss.vertex += w * loss.vertex;
        entry.train_loss.joint += w * loss.joint;
        entry.train_loss.joint2d += w * loss.joint2d;
        entry.grad_norm += norm;
        weight += w;
        ++steps;
      }
      entry.train_loss = {entry.train_loss.total / weight, entry.train_loss.vertex / weight,
                          entry.train_loss.joint / weight, entry.train_loss.joint2d / weight};
      entry.grad_norm /= static_cast<double>(steps);
      finish_epoch(entry);
    }
    hooks_ = nullptr;
    return log;
  }

 private:
  [[noreturn]] void abort_evaluation(Index epoch, const std::string& what) {
    fail("non-finite value while evaluating epoch " + std::to_string(epoch) + ": " + what);
  }

  [[noreturn]] void abort_step(Index epoch, const std::vector<const TrainingSample<Scalar>*>& batch,
                               const std::vector<std::string>& trail) {
    std::ostringstream msg;
    msg << "non-finite loss or gradient at epoch " << epoch << ", optimizer step " << optimizer_.state().step + 1
        << "; batch samples:";
    for (const auto* s : batch) msg << ' ' << s->sample_id;
    for (const auto& line : trail) msg << "\n  " << line;
    fail(msg.str());
  }

  [[noreturn]] void fail(std::string msg) {
    if (hooks_ && !hooks_->diagnostic_path.empty()) {
      std::ofstream out(hooks_->diagnostic_path);
      out << msg << '\n';
      msg += "\n(diagnostics written to " + hooks_->diagnostic_path.string() + ")";
    }
    hooks_ = nullptr;
    throw TrainingError(msg);
  }

  FastMetro<Scalar>& model_;
  TrainConfig config_;
  AdamW<Scalar> optimizer_;
  const TrainHooks* hooks_ = nullptr;
};

/// CSV header and row for an epoch log.
std::string training_log_header();
std::string training_log_row(const EpochLog& e);

struct MaskStudyRow {
  Index epoch = 0;
  double loss_full = 0, loss_off = 0;
  double pa_mpjpe_full = 0, pa_mpjpe_off = 0;
};

/// Trains the same initialization twice, with mask_mode full and off, and
/// pairs the per-epoch curves.
std::vector<MaskStudyRow> run_mask_study(const ModelConfig& base, const MeshTopology& topology,
                                         const std::vector<SyntheticSample>& samples, const TrainConfig& train,
                                         std::uint64_t model_seed);

void write_mask_study(const std::filesystem::path& path, const std::vector<MaskStudyRow>& rows);

}  // namespace fastmetro
