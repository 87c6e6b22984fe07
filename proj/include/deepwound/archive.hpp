#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace deepwound {

/// 64-bit FNV-1a, used for payload integrity and weight checksums.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const float> values, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

/// Named float32 tensors plus a JSON metadata object.
///
/// File layout (little endian):
///   "DWTA" | u32 format version | u64 header length | header JSON | payload
/// The header carries `meta`, the tensor index (name, shape, offset, count),
/// the payload size and its FNV-1a digest; any mismatch on read is reported
/// as CorruptBundle.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const;
};

void write_archive(const TensorArchive& archive, const std::string& path);
TensorArchive read_archive(const std::string& path);

}  // namespace deepwound
