// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "fastmetro/config_json.hpp"
#include "fastmetro/model.hpp"
#include "fastmetro/optimizer.hpp"
#include "fastmetro/serialization.hpp"

namespace fastmetro {

/// Model config echoed in a checkpoint header.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Parses the JSON header of a checkpoint block file.
Json checkpoint_header(const BlockFile& file);

/// Writes every parameter as "param/<name>" and, when given, the optimizer
/// moments as "adam.m/<name>" and "adam.v/<name>" with the step count in the
/// header.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const FastMetro<Scalar>& model,
                     const AdamW<Scalar>* optimizer = nullptr) {
  const auto& store = model.parameters();
  Json header{{"model", to_json(model.config())}, {"parameters", store.size()}};
  header["optimizer"] = optimizer ? Json{{"step", optimizer->state().step}} : Json(nullptr);
  BlockFile file;
  file.header = header.dump();
  for (std::size_t i = 0; i < store.size(); ++i) {
    file.blocks.push_back({"param/" + store.name(i), store.at(i).template cast<double>()});
  }
  if (optimizer) {
    const auto& st = optimizer->state();
    for (std::size_t i = 0; i < store.size(); ++i) {
      const Shape& shape = store.at(i).shape();
      file.blocks.push_back({"adam.m/" + store.name(i), DenseTensor<double>(shape, st.m[i].template cast<double>())});
      file.blocks.push_back({"adam.v/" + store.name(i), DenseTensor<double>(shape, st.v[i].template cast<double>())});
    }
  }
  write_block_file(path, kCheckpointMagic, file);
}

/// Restores parameters (and optimizer state when `optimizer` is given).
/// Throws DataError if the checkpoint was written for a different config,
/// lacks a tensor, or lacks optimizer state that was requested.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, FastMetro<Scalar>& model, AdamW<Scalar>* optimizer = nullptr) {
  const BlockFile file = read_block_file(path, kCheckpointMagic);
  const Json header = checkpoint_header(file);
  ModelConfig saved;
  try {
    saved = model_config_from_json(header.at("model"));
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": unreadable model config: " + e.what());
  }
  if (!(saved == model.config())) {
    throw DataError(path.string() + ": checkpoint config " + to_json(saved).dump() + " does not match model config " +
                    to_json(model.config()).dump());
  }
  auto& store = model.parameters();
  auto fetch = [&](const std::string& name, const Shape& shape) {
    const auto& t = file.at(name);
    if (t.shape() != shape) {
      throw DataError(path.string() + ": block " + name + " has shape " + to_string(t.shape()) + ", expected " +
                      to_string(shape));
    }
    return t.values().template cast<Scalar>().eval();
  };
  std::vector<VecX<Scalar>> values, m, v;
  for (std::size_t i = 0; i < store.size(); ++i) values.push_back(fetch("param/" + store.name(i), store.at(i).shape()));
  if (optimizer) {
    if (header.at("optimizer").is_null()) throw DataError(path.string() + ": checkpoint has no optimizer state");
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.push_back(fetch("adam.m/" + store.name(i), store.at(i).shape()));
      v.push_back(fetch("adam.v/" + store.name(i), store.at(i).shape()));
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) store.at(i).values() = values[i];
  store.zero_grad();
  if (optimizer) {
    auto& st = optimizer->state();
    st.step = header.at("optimizer").at("step").template get<Index>();
    st.m = std::move(m);
    st.v = std::move(v);
  }
}

}  // namespace fastmetro
