#pragma once

// Binary tensor container shared by checkpoints and state files.
//
//   "MELS" | u32 version | u64 header length | JSON header | payload
//
// Integers are little-endian. The header holds caller metadata under
// "meta" and a tensor directory (name, shape, byte offset into the
// payload) plus the payload size and FNV-1a checksum. Payload tensors are
// row-major little-endian float32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lifestream/ndgrad.hpp"

namespace lifestream {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, nd::Array<float>>> tensors;

  const nd::Array<float>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_tensor_file(const TensorFile& file);
// CheckpointError (with byte offset) on bad magic, version mismatch,
// truncation or checksum failure.
TensorFile decode_tensor_file(const std::string& bytes);

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace lifestream
