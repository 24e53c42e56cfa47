// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fastmetro/config.hpp"

namespace fastmetro {

/// Learnable scalar counts per component, from closed-form layer sizes.
struct ParameterCount {
  Index tokens = 0;       // camera, joint and vertex tokens
  Index encoder = 0;      // all encoder layers
  Index decoder = 0;      // all decoder layers
  Index projections = 0;  // input projection C -> D1 and inter-stage reductions
  Index positional = 0;   // learned positional encodings, if any
  Index heads = 0;        // coordinate and camera heads
  Index backbone = 0;     // toy backbone, reported but not part of the total

  /// Transformer total, backbone excluded.
  Index total() const { return tokens + encoder + decoder + projections + positional + heads; }
};

Index encoder_layer_parameters(Index d, Index mlp_expansion);
Index decoder_layer_parameters(Index d, Index mlp_expansion);

ParameterCount count_parameters(const ModelConfig& config);

/// Human-readable per-component table.
std::string format_parameter_table(const ParameterCount& count);

}  // namespace fastmetro
