// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/checkpoint.hpp"

namespace fastmetro {

Json checkpoint_header(const BlockFile& file) {
  Json header;
  try {
    header = Json::parse(file.header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("model") || !header.contains("optimizer")) {
    throw DataError("checkpoint header lacks model or optimizer entries");
  }
  return header;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  const Json header = checkpoint_header(read_block_file(path, kCheckpointMagic));
  try {
    return model_config_from_json(header.at("model"));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": unreadable model config: " + e.what());
  }
}

}  // namespace fastmetro
