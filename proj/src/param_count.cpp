// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/param_count.hpp"

#include <cstdio>
#include <utility>

namespace fastmetro {

namespace {

Index linear_params(Index in, Index out) { return in * out + out; }
Index attention_params(Index d) { return 4 * linear_params(d, d); }
Index mlp_params(Index d, Index expansion) {
  return linear_params(d, d * expansion) + linear_params(d * expansion, d);
}
Index norm_params(Index d) { return 2 * d; }

}  // namespace

Index encoder_layer_parameters(Index d, Index mlp_expansion) {
  return attention_params(d) + mlp_params(d, mlp_expansion) + 2 * norm_params(d);
}

Index decoder_layer_parameters(Index d, Index mlp_expansion) {
  return 2 * attention_params(d) + mlp_params(d, mlp_expansion) + 3 * norm_params(d);
}

ParameterCount count_parameters(const ModelConfig& c) {
  c.validate();
  ParameterCount n;
  const Index d1 = c.stage_dims.front();
  n.tokens = (1 + c.joints + c.coarse_vertices) * d1;
  n.projections = linear_params(c.backbone_channels, d1);
  for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
    const Index d = c.stage_dims[s];
    n.encoder += c.enc_layers_per_stage[s] * encoder_layer_parameters(d, c.mlp_expansion);
    n.decoder += c.dec_layers_per_stage[s] * decoder_layer_parameters(d, c.mlp_expansion);
    if (s > 0) n.projections += 3 * linear_params(c.stage_dims[s - 1], d);
  }
  if (c.positional_encoding == PositionalEncoding::learned) n.positional = c.grid_cells() * d1;
  n.heads = 2 * linear_params(c.stage_dims.back(), 3);
  const Index patch_len = (c.image_h / c.grid_h) * (c.image_w / c.grid_w) * c.image_channels;
  n.backbone = linear_params(patch_len, c.backbone_hidden) + linear_params(c.backbone_hidden, c.backbone_channels);
  return n;
}

std::string format_parameter_table(const ParameterCount& n) {
  const std::pair<const char*, Index> rows[] = {
      {"tokens", n.tokens},   {"encoder", n.encoder},       {"decoder", n.decoder},
      {"projections", n.projections}, {"positional", n.positional}, {"heads", n.heads},
  };
  std::string out;
  char line[96];
  for (const auto& [name, value] : rows) {
    std::snprintf(line, sizeof line, "%-14s %12lld\n", name, static_cast<long long>(value));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-14s %12lld  (%.2fM)\n", "total", static_cast<long long>(n.total()),
                static_cast<double>(n.total()) / 1e6);
  out += line;
  std::snprintf(line, sizeof line, "%-14s %12lld  (not in total)\n", "backbone", static_cast<long long>(n.backbone));
  out += line;
  return out;
}

}  // namespace fastmetro
