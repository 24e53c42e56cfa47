// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON (de)serialization of configs. Unknown keys are rejected so typos in
// experiment files fail loudly.

#include "fastmetro/config.hpp"
#include "json.hpp"

namespace fastmetro {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& config);
Json to_json(const TrainConfig& config);
Json to_json(const LossWeights& weights);

/// Applies the keys present in `j` on top of `base`. A "variant" key, when
/// present, first resets the base to that variant.
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
LossWeights loss_weights_from_json(const Json& j, LossWeights base = {});

}  // namespace fastmetro
