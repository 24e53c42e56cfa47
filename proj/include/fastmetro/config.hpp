// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fastmetro/eigen_types.hpp"

namespace fastmetro {

enum class MaskMode { full, half_heads, off };
enum class PositionalEncoding { fixed_sine, learned, none };

std::string to_string(MaskMode mode);
std::string to_string(PositionalEncoding pe);
MaskMode parse_mask_mode(std::string_view text);
PositionalEncoding parse_positional_encoding(std::string_view text);

/// Architecture hyperparameters.
///
/// Defaults are the small variant at full scale: two stages of widths
/// 512 and 128 with one encoder and one decoder layer each, 8 heads,
/// 14 joints, 431 coarse and 6890 fine vertices over a 7x7x2048 feature grid.
struct ModelConfig {
  std::vector<Index> stage_dims{512, 128};
  std::vector<Index> enc_layers_per_stage{1, 1};
  std::vector<Index> dec_layers_per_stage{1, 1};
  Index num_heads = 8;
  Index mlp_expansion = 4;

  Index joints = 14;            // K
  Index coarse_vertices = 431;  // N
  Index fine_vertices = 6890;   // M

  Index grid_h = 7;
  Index grid_w = 7;
  Index backbone_channels = 2048;  // C
  Index backbone_hidden = 64;
  Index image_h = 56;
  Index image_w = 56;
  Index image_channels = 1;

  MaskMode mask_mode = MaskMode::full;
  PositionalEncoding positional_encoding = PositionalEncoding::fixed_sine;

  // Regressed coordinates and camera translation are multiplied by this
  // fixed factor, so unit-scale activations map onto the data's units.
  double output_scale = 1.0;
  double layer_norm_eps = 1e-5;

  /// "S", "M" or "L": 1, 2 or 3 encoder and decoder layers per stage.
  static ModelConfig variant(std::string_view name);

  Index stage_count() const { return static_cast<Index>(stage_dims.size()); }
  Index grid_cells() const { return grid_h * grid_w; }

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Loss coefficients and availability flags for the 3D and 2D terms.
struct LossWeights {
  double lambda_vertex3d = 100.0;
  double lambda_joint3d = 1000.0;
  double lambda_joint2d = 100.0;
  bool has_3d = true;  // alpha
  bool has_2d = true;  // beta

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.3;
  Index batch_size = 16;
  Index epochs = 60;
  std::uint64_t seed = 0;
  // fraction of the dataset held out for per-epoch evaluation
  double holdout_fraction = 0.125;
  // also evaluate metrics on the training split each epoch
  bool eval_train = true;
  LossWeights loss;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Compact JSON echo of a model config, stable across runs; used in
/// checkpoint headers.
std::string to_json_string(const ModelConfig& config);
ModelConfig model_config_from_json_string(std::string_view text);

}  // namespace fastmetro
