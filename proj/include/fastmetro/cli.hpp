// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fastmetro/config.hpp"

namespace fastmetro {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;  // usage, config or data validation
inline constexpr int kExitRuntime = 3;  // numeric or training failure

/// Model and training settings for one run.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// "S", "M" or "L" expands to that variant with default training settings.
/// Anything else is read as a JSON file {"model": {...}, "train": {...}};
/// both keys are optional and unknown keys are rejected.
RunConfig load_run_config(const std::string& spec);

/// Entry point behind the `fastmetro` executable. `args` excludes the
/// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fastmetro
