#include "deepwound/archive.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "deepwound/error.hpp"

namespace deepwound {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'W', 'T', 'A'};
constexpr std::uint32_t kFormatVersion = 1;

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::kCorruptBundle, path + ": " + why);
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::span<const float> values, std::uint64_t seed) {
  return fnv1a64(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()),
      seed);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const TensorRecord* TensorArchive::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_archive(const TensorArchive& archive, const std::string& path) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::uint64_t digest = 0xcbf29ce484222325ULL;
  for (const auto& t : archive.tensors) {
    std::int64_t expected = 1;
    for (auto d : t.shape) expected *= d;
    if (expected != static_cast<std::int64_t>(t.data.size())) {
      throw Error(ErrorCode::kCorruptBundle, "tensor " + t.name + " shape does not match its data");
    }
    index.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size() * sizeof(float);
    digest = fnv1a64(t.data, digest);
  }
  nlohmann::json header = {{"meta", archive.meta},
                           {"tensors", index},
                           {"payload_bytes", offset},
                           {"payload_fnv1a64", hex64(digest)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t header_len = text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : archive.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
}

TensorArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);

  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) corrupt(path, "bad magic");
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version) || version != kFormatVersion) {
    corrupt(path, "unsupported format version");
  }
  if (!in.read(reinterpret_cast<char*>(&header_len), sizeof header_len) || header_len > (1u << 28)) {
    corrupt(path, "bad header length");
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) corrupt(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("header is not valid JSON: ") + e.what());
  }

  TensorArchive archive;
  std::uint64_t digest = 0xcbf29ce484222325ULL;
  try {
    archive.meta = header.at("meta");
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    std::uint64_t expected_offset = 0;
    for (const auto& rec : header.at("tensors")) {
      TensorRecord t;
      t.name = rec.at("name").get<std::string>();
      t.shape = rec.at("shape").get<std::vector<std::int64_t>>();
      const auto count = rec.at("count").get<std::uint64_t>();
      if (rec.at("offset").get<std::uint64_t>() != expected_offset) corrupt(path, "tensor offsets out of order");
      std::int64_t expected = 1;
      for (auto d : t.shape) expected *= d;
      if (expected < 0 || static_cast<std::uint64_t>(expected) != count) corrupt(path, "tensor shape/count mismatch");
      if (expected_offset + count * sizeof(float) > payload_bytes) corrupt(path, "tensor index exceeds payload");
      t.data.resize(count);
      if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * sizeof(float)))) {
        corrupt(path, "truncated payload");
      }
      digest = fnv1a64(t.data, digest);
      expected_offset += count * sizeof(float);
      archive.tensors.push_back(std::move(t));
    }
    if (expected_offset != payload_bytes) corrupt(path, "payload size mismatch");
    if (hex64(digest) != header.at("payload_fnv1a64").get<std::string>()) corrupt(path, "payload checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) corrupt(path, "trailing bytes after payload");
  return archive;
}

}  // namespace deepwound
