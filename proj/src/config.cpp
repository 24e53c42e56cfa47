// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/config.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "fastmetro/config_json.hpp"
#include "fastmetro/errors.hpp"

namespace fastmetro {

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::full:
      return "full";
    case MaskMode::half_heads:
      return "half_heads";
    case MaskMode::off:
      return "off";
  }
  return "?";
}

std::string to_string(PositionalEncoding pe) {
  switch (pe) {
    case PositionalEncoding::fixed_sine:
      return "fixed_sine";
    case PositionalEncoding::learned:
      return "learned";
    case PositionalEncoding::none:
      return "none";
  }
  return "?";
}

MaskMode parse_mask_mode(std::string_view text) {
  if (text == "full") return MaskMode::full;
  if (text == "half_heads") return MaskMode::half_heads;
  if (text == "off") return MaskMode::off;
  throw ConfigError("unknown mask_mode '" + std::string(text) + "' (expected full, half_heads or off)");
}

PositionalEncoding parse_positional_encoding(std::string_view text) {
  if (text == "fixed_sine") return PositionalEncoding::fixed_sine;
  if (text == "learned") return PositionalEncoding::learned;
  if (text == "none") return PositionalEncoding::none;
  throw ConfigError("unknown positional_encoding '" + std::string(text) + "' (expected fixed_sine, learned or none)");
}

ModelConfig ModelConfig::variant(std::string_view name) {
  Index layers = 0;
  if (name == "S") layers = 1;
  else if (name == "M") layers = 2;
  else if (name == "L") layers = 3;
  else throw ConfigError("unknown variant '" + std::string(name) + "' (expected S, M or L)");
  ModelConfig c;
  c.enc_layers_per_stage = {layers, layers};
  c.dec_layers_per_stage = {layers, layers};
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (stage_dims.empty()) fail("at least one stage is required");
  if (enc_layers_per_stage.size() != stage_dims.size() || dec_layers_per_stage.size() != stage_dims.size()) {
    fail("layer counts must be given for every stage");
  }
  if (num_heads <= 0) fail("num_heads must be positive");
  for (std::size_t s = 0; s < stage_dims.size(); ++s) {
    if (stage_dims[s] <= 0) fail("stage dims must be positive");
    if (stage_dims[s] % num_heads != 0) {
      fail("stage dim " + std::to_string(stage_dims[s]) + " is not divisible by " + std::to_string(num_heads) +
           " heads");
    }
    if (s > 0 && stage_dims[s] >= stage_dims[s - 1]) fail("stage dims must be strictly decreasing");
    if (enc_layers_per_stage[s] < 0 || dec_layers_per_stage[s] < 0) fail("layer counts must be non-negative");
  }
  if (mlp_expansion <= 0) fail("mlp_expansion must be positive");
  if (joints <= 0 || coarse_vertices <= 0 || fine_vertices <= 0) fail("joint and vertex counts must be positive");
  if (grid_h <= 0 || grid_w <= 0 || backbone_channels <= 0 || backbone_hidden <= 0) fail("feature grid must be positive");
  if (image_h <= 0 || image_w <= 0 || image_channels <= 0) fail("image extents must be positive");
  if (image_h % grid_h != 0 || image_w % grid_w != 0) {
    fail("image " + std::to_string(image_h) + "x" + std::to_string(image_w) + " is not divisible into a " +
         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " patch grid");
  }
  if (positional_encoding == PositionalEncoding::fixed_sine && stage_dims.front() % 4 != 0) {
    fail("fixed sine positional encoding needs the first stage dim divisible by 4");
  }
  if (mask_mode == MaskMode::half_heads && num_heads < 2) fail("half_heads masking needs at least 2 heads");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) fail("output_scale must be positive");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

void LossWeights::validate() const {
  if (!(lambda_vertex3d >= 0.0) || !(lambda_joint3d >= 0.0) || !(lambda_joint2d >= 0.0)) {
    throw ConfigError("loss coefficients must be non-negative");
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fail("betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (epochs <= 0) fail("epochs must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in [0, 1)");
  loss.validate();
}

namespace {

template <typename T>
T get(const Json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(const Json&)>;

void apply(const Json& j, const std::map<std::string, Setter>& setters, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown " + section + " config key '" + key + "'");
    it->second(value);
  }
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"stage_dims", c.stage_dims},
              {"enc_layers_per_stage", c.enc_layers_per_stage},
              {"dec_layers_per_stage", c.dec_layers_per_stage},
              {"num_heads", c.num_heads},
              {"mlp_expansion", c.mlp_expansion},
              {"joints", c.joints},
              {"coarse_vertices", c.coarse_vertices},
              {"fine_vertices", c.fine_vertices},
              {"grid_h", c.grid_h},
              {"grid_w", c.grid_w},
              {"backbone_channels", c.backbone_channels},
              {"backbone_hidden", c.backbone_hidden},
              {"image_h", c.image_h},
              {"image_w", c.image_w},
              {"image_channels", c.image_channels},
              {"mask_mode", to_string(c.mask_mode)},
              {"positional_encoding", to_string(c.positional_encoding)},
              {"output_scale", c.output_scale},
              {"layer_norm_eps", c.layer_norm_eps}};
}

Json to_json(const LossWeights& w) {
  return Json{{"lambda_vertex3d", w.lambda_vertex3d},
              {"lambda_joint3d", w.lambda_joint3d},
              {"lambda_joint2d", w.lambda_joint2d},
              {"has_3d", w.has_3d},
              {"has_2d", w.has_2d}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},                 {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},           {"grad_clip_norm", c.grad_clip_norm},
              {"batch_size", c.batch_size},       {"epochs", c.epochs},
              {"seed", c.seed},                   {"holdout_fraction", c.holdout_fraction},
              {"eval_train", c.eval_train},       {"loss", to_json(c.loss)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig base) {
  if (j.is_object() && j.contains("variant")) base = ModelConfig::variant(get<std::string>(j.at("variant"), "variant"));
  ModelConfig& c = base;
  auto index = [](Index& field, const std::string& key) {
    return [&field, key](const Json& v) { field = get<Index>(v, key); };
  };
  auto indices = [](std::vector<Index>& field, const std::string& key) {
    return [&field, key](const Json& v) { field = get<std::vector<Index>>(v, key); };
  };
  auto real = [](double& field, const std::string& key) {
    return [&field, key](const Json& v) { field = get<double>(v, key); };
  };
  const std::map<std::string, Setter> setters{
      {"variant", [](const Json&) {}},
      {"stage_dims", indices(c.stage_dims, "stage_dims")},
      {"enc_layers_per_stage", indices(c.enc_layers_per_stage, "enc_layers_per_stage")},
      {"dec_layers_per_stage", indices(c.dec_layers_per_stage, "dec_layers_per_stage")},
      {"num_heads", index(c.num_heads, "num_heads")},
      {"mlp_expansion", index(c.mlp_expansion, "mlp_expansion")},
      {"joints", index(c.joints, "joints")},
      {"coarse_vertices", index(c.coarse_vertices, "coarse_vertices")},
      {"fine_vertices", index(c.fine_vertices, "fine_vertices")},
      {"grid_h", index(c.grid_h, "grid_h")},
      {"grid_w", index(c.grid_w, "grid_w")},
      {"backbone_channels", index(c.backbone_channels, "backbone_channels")},
      {"backbone_hidden", index(c.backbone_hidden, "backbone_hidden")},
      {"image_h", index(c.image_h, "image_h")},
      {"image_w", index(c.image_w, "image_w")},
      {"image_channels", index(c.image_channels, "image_channels")},
      {"mask_mode", [&c](const Json& v) { c.mask_mode = parse_mask_mode(get<std::string>(v, "mask_mode")); }},
      {"positional_encoding",
       [&c](const Json& v) {
         c.positional_encoding = parse_positional_encoding(get<std::string>(v, "positional_encoding"));
       }},
      {"output_scale", real(c.output_scale, "output_scale")},
      {"layer_norm_eps", real(c.layer_norm_eps, "layer_norm_eps")},
  };
  apply(j, setters, "model");
  return base;
}

LossWeights loss_weights_from_json(const Json& j, LossWeights w) {
  const std::map<std::string, Setter> setters{
      {"lambda_vertex3d", [&w](const Json& v) { w.lambda_vertex3d = get<double>(v, "lambda_vertex3d"); }},
      {"lambda_joint3d", [&w](const Json& v) { w.lambda_joint3d = get<double>(v, "lambda_joint3d"); }},
      {"lambda_joint2d", [&w](const Json& v) { w.lambda_joint2d = get<double>(v, "lambda_joint2d"); }},
      {"has_3d", [&w](const Json& v) { w.has_3d = get<bool>(v, "has_3d"); }},
      {"has_2d", [&w](const Json& v) { w.has_2d = get<bool>(v, "has_2d"); }},
  };
  apply(j, setters, "loss");
  return w;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  auto real = [](double& field, const std::string& key) {
    return [&field, key](const Json& v) { field = get<double>(v, key); };
  };
  const std::map<std::string, Setter> setters{
      {"learning_rate", real(c.learning_rate, "learning_rate")},
      {"weight_decay", real(c.weight_decay, "weight_decay")},
      {"beta1", real(c.beta1, "beta1")},
      {"beta2", real(c.beta2, "beta2")},
      {"adam_eps", real(c.adam_eps, "adam_eps")},
      {"grad_clip_norm", real(c.grad_clip_norm, "grad_clip_norm")},
      {"batch_size", [&c](const Json& v) { c.batch_size = get<Index>(v, "batch_size"); }},
      {"epochs", [&c](const Json& v) { c.epochs = get<Index>(v, "epochs"); }},
      {"seed", [&c](const Json& v) { c.seed = get<std::uint64_t>(v, "seed"); }},
      {"holdout_fraction", real(c.holdout_fraction, "holdout_fraction")},
      {"eval_train", [&c](const Json& v) { c.eval_train = get<bool>(v, "eval_train"); }},
      {"loss", [&c](const Json& v) { c.loss = loss_weights_from_json(v, c.loss); }},
  };
  apply(j, setters, "train");
  return c;
}

std::string to_json_string(const ModelConfig& config) { return to_json(config).dump(); }

ModelConfig model_config_from_json_string(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return model_config_from_json(j);
}

}  // namespace fastmetro
