// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fastmetro/errors.hpp"

namespace fastmetro {

namespace {

template <typename UInt>
void put(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(source_ + ": truncated at byte offset " + std::to_string(bytes_.size()) + " while reading " +
                      what + " (needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
    }
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename UInt>
  UInt get(const char* what) {
    std::string_view s = take(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(source_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const DenseTensor<double>& BlockFile::at(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b.tensor;
  }
  throw DataError("missing tensor block '" + std::string(name) + "'");
}

std::string encode_block_file(std::string_view magic, const BlockFile& file) {
  if (magic.size() != 8) throw Error("block file magic must be 8 bytes");
  std::string out(magic);
  put<std::uint32_t>(out, kBlockFormatVersion);
  put<std::uint64_t>(out, file.header.size());
  out += file.header;
  put<std::uint64_t>(out, file.blocks.size());
  for (const auto& b : file.blocks) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.tensor.rank()));
    for (Index e : b.tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < b.tensor.size(); ++i) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(b.tensor[i]));
  }
  return out;
}

BlockFile decode_block_file(std::string_view magic, std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(8, "magic") != magic) {
    throw DataError(source + ": bad magic at byte offset 0, expected " + std::string(magic));
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kBlockFormatVersion) {
    throw DataError(source + ": unsupported format version " + std::to_string(version) + " at byte offset 8");
  }
  BlockFile file;
  const auto header_len = r.get<std::uint64_t>("header length");
  file.header = std::string(r.take(header_len, "header"));
  const auto count = r.get<std::uint64_t>("block count");
  for (std::uint64_t b = 0; b < count; ++b) {
    TensorBlock block;
    const auto name_len = r.get<std::uint32_t>("block name length");
    block.name = std::string(r.take(name_len, "block name"));
    const auto rank = r.get<std::uint32_t>("block rank");
    if (rank > 8) r.fail("block '" + block.name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.get<std::uint64_t>("block extent");
      if (e == 0 || e > (std::uint64_t{1} << 40)) r.fail("block '" + block.name + "' has invalid extent");
      total *= e;
      if (total > (std::uint64_t{1} << 40)) r.fail("block '" + block.name + "' is too large");
      shape.push_back(static_cast<Index>(e));
    }
    VecX<double> values(static_cast<Index>(total));
    std::string_view data = r.take(total * 8, "block values");
    for (std::uint64_t i = 0; i < total; ++i) {
      std::uint64_t bits = 0;
      for (std::size_t k = 0; k < 8; ++k) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[i * 8 + k])) << (8 * k);
      }
      values[static_cast<Index>(i)] = std::bit_cast<double>(bits);
    }
    block.tensor = DenseTensor<double>(std::move(shape), std::move(values));
    file.blocks.push_back(std::move(block));
  }
  if (!r.done()) r.fail("unexpected trailing data");
  return file;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

void write_block_file(const std::filesystem::path& path, std::string_view magic, const BlockFile& file) {
  write_file(path, encode_block_file(magic, file));
}

BlockFile read_block_file(const std::filesystem::path& path, std::string_view magic) {
  return decode_block_file(magic, read_file(path), path.string());
}

}  // namespace fastmetro
