// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fastmetro/tensor.hpp"

namespace fastmetro {

inline constexpr std::string_view kCheckpointMagic = "FMTRCKPT";
inline constexpr std::string_view kSampleMagic = "FMTRSMPL";
inline constexpr std::uint32_t kBlockFormatVersion = 1;

struct TensorBlock {
  std::string name;
  DenseTensor<double> tensor;
};

/// Binary tensor container: 8-byte magic, u32 version, u64 header length,
/// JSON header text, u64 block count, then per block u32 name length, name,
/// u32 rank, rank u64 extents and the values as f64. All little-endian.
struct BlockFile {
  std::string header;
  std::vector<TensorBlock> blocks;

  /// Throws DataError if no block carries `name`.
  const DenseTensor<double>& at(std::string_view name) const;
};

std::string encode_block_file(std::string_view magic, const BlockFile& file);

/// Throws DataError naming the byte offset on truncation, bad magic, an
/// unsupported version or trailing bytes.
BlockFile decode_block_file(std::string_view magic, std::string_view bytes, const std::string& source = "buffer");

void write_block_file(const std::filesystem::path& path, std::string_view magic, const BlockFile& file);
BlockFile read_block_file(const std::filesystem::path& path, std::string_view magic);

/// Whole-file helpers shared by the writers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace fastmetro
