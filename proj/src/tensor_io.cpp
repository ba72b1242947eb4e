#include "lifestream/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lifestream/errors.hpp"

namespace lifestream {

namespace {

constexpr char kMagic[4] = {'M', 'E', 'L', 'S'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

[[noreturn]] void corrupt(std::size_t offset, const std::string& what) {
  throw CheckpointError("tensor file corrupt at byte offset " + std::to_string(offset) + ": " + what);
}

}  // namespace

const nd::Array<float>& TensorFile::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("tensor \"" + name + "\" not found");
}

bool TensorFile::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

std::string encode_tensor_file(const TensorFile& file) {
  std::string payload;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, t] : file.tensors) {
    dir.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", payload.size()}});
    for (nd::Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      const float f = t.data()[i];
      std::memcpy(&bits, &f, sizeof(bits));
      put_le(payload, bits);
    }
  }
  const nlohmann::json header{{"meta", file.meta},
                              {"tensors", dir},
                              {"payload_bytes", payload.size()},
                              {"payload_fnv1a", hex(fnv1a(payload.data(), payload.size()))}};
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

TensorFile decode_tensor_file(const std::string& bytes) {
  if (bytes.size() < 4) corrupt(bytes.size(), "file shorter than the magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) corrupt(0, "bad magic (expected \"MELS\")");
  if (bytes.size() < 16) corrupt(bytes.size(), "truncated fixed header");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFormatVersion) {
    throw CheckpointError("incompatible tensor file version " + std::to_string(version) + " (this build reads " +
                          std::to_string(kTensorFormatVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) corrupt(bytes.size(), "truncated JSON header");
  nlohmann::json header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len),
                                                nullptr, false);
  if (header.is_discarded() || !header.is_object()) corrupt(16, "JSON header does not parse");

  const std::size_t base = 16 + static_cast<std::size_t>(header_len);
  TensorFile out;
  try {
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - base < payload_bytes) {
      corrupt(bytes.size(), "payload truncated (" + std::to_string(bytes.size() - base) + " of " +
                                std::to_string(payload_bytes) + " bytes)");
    }
    if (bytes.size() - base > payload_bytes) corrupt(base + payload_bytes, "trailing bytes after payload");
    if (hex(fnv1a(bytes.data() + base, payload_bytes)) != header.at("payload_fnv1a").get<std::string>()) {
      corrupt(base, "payload checksum mismatch");
    }
    out.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("shape").at(0).get<nd::Index>();
      const auto cols = entry.at("shape").at(1).get<nd::Index>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0) corrupt(16, "negative shape for \"" + name + "\"");
      const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
      if (offset > payload_bytes || count * 4 > payload_bytes - offset) {
        corrupt(base + offset, "tensor \"" + name + "\" runs past the payload");
      }
      nd::Array<float> t(rows, cols);
      for (std::size_t i = 0; i < count; ++i) {
        const auto bits = get_le<std::uint32_t>(bytes, base + offset + 4 * i);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        t.data()[i] = f;
      }
      out.tensors.emplace_back(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(16, std::string("malformed header: ") + e.what());
  }
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const std::string bytes = encode_tensor_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor_file(bytes);
}

}  // namespace lifestream
