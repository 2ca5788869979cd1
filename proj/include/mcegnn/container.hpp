#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcegnn/tensor.hpp"

namespace mcegnn {

// On-disk layout (all integers little-endian):
//
//   bytes 0..7   magic "MCEGNNAR"
//   bytes 8..15  uint64 manifest length L
//   bytes 16..   manifest: UTF-8 JSON of L bytes
//   then         payloads: concatenated float64 arrays, little-endian,
//                one per manifest entry, at the recorded offsets
//
// The manifest records format_version {major, minor}, endianness, dtype,
// a free-form "meta" object, and per array: name, shape, offset (bytes from
// the start of the payload section) and an FNV-1a 64 checksum of the payload.
// Loaders reject a higher major version; higher minor versions load.

class ContainerError : public std::runtime_error {
 public:
  enum class Kind { kTruncated, kBadMagic, kVersion, kLayout, kChecksum };

  ContainerError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct ArrayStore {
  std::vector<NamedArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }

  const NamedArray& at(const std::string& name) const {
    const NamedArray* a = find(name);
    if (!a) throw ContainerError(ContainerError::Kind::kLayout, "missing array '" + name + "'");
    return *a;
  }
};

namespace detail {

inline constexpr char kContainerMagic[8] = {'M', 'C', 'E', 'G', 'N', 'N', 'A', 'R'};
inline constexpr int kContainerMajor = 1;
inline constexpr int kContainerMinor = 0;

inline std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace detail

// Writes atomically: the file appears under `path` only once fully written.
inline void save_container(const std::filesystem::path& path, const ArrayStore& store) {
  if (!detail::host_is_little_endian()) {
    throw ContainerError(ContainerError::Kind::kLayout, "writer requires a little-endian host");
  }
  nlohmann::json manifest;
  manifest["format_version"] = {{"major", detail::kContainerMajor},
                                {"minor", detail::kContainerMinor}};
  manifest["endianness"] = "little";
  manifest["dtype"] = "float64";
  manifest["meta"] = store.meta;
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : store.arrays) {
    for (const auto& other : store.arrays) {
      if (&other != &a && other.name == a.name) {
        throw ContainerError(ContainerError::Kind::kLayout,
                             "duplicate array name '" + a.name + "'");
      }
    }
    if (numel(a.shape) != static_cast<std::int64_t>(a.values.size())) {
      throw ContainerError(ContainerError::Kind::kLayout,
                           "array '" + a.name + "': shape does not match value count");
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.values.data());
    const std::size_t nbytes = a.values.size() * sizeof(double);
    char checksum[17];
    std::snprintf(checksum, sizeof checksum, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(bytes, nbytes)));
    entries.push_back({{"name", a.name},
                       {"shape", a.shape},
                       {"offset", offset},
                       {"checksum", std::string(checksum)}});
    offset += nbytes;
  }
  manifest["arrays"] = entries;

  const std::string manifest_text = manifest.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError(ContainerError::Kind::kLayout,
                                   "cannot open '" + tmp.string() + "' for writing");
    out.write(detail::kContainerMagic, sizeof detail::kContainerMagic);
    const std::uint64_t len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    for (const auto& a : store.arrays) {
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!out) throw ContainerError(ContainerError::Kind::kLayout,
                                   "write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline ArrayStore load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ContainerError(ContainerError::Kind::kTruncated,
                         "cannot open '" + path.string() + "'");
  }
  char magic[8];
  if (!in.read(magic, sizeof magic)) {
    throw ContainerError(ContainerError::Kind::kTruncated, "file shorter than the magic");
  }
  if (std::memcmp(magic, detail::kContainerMagic, sizeof magic) != 0) {
    throw ContainerError(ContainerError::Kind::kBadMagic, "not a container file");
  }
  std::uint64_t manifest_len = 0;
  if (!in.read(reinterpret_cast<char*>(&manifest_len), sizeof manifest_len)) {
    throw ContainerError(ContainerError::Kind::kTruncated, "file shorter than the header");
  }
  std::string manifest_text(manifest_len, '\0');
  if (!in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len))) {
    throw ContainerError(ContainerError::Kind::kTruncated, "truncated manifest");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerError::Kind::kLayout,
                         std::string("bad manifest JSON: ") + e.what());
  }

  const int major = manifest.at("format_version").at("major").get<int>();
  if (major != detail::kContainerMajor) {
    throw ContainerError(ContainerError::Kind::kVersion,
                         "unsupported container major version " + std::to_string(major));
  }
  if (manifest.at("endianness").get<std::string>() != "little" ||
      !detail::host_is_little_endian()) {
    throw ContainerError(ContainerError::Kind::kLayout, "endianness mismatch");
  }
  if (manifest.at("dtype").get<std::string>() != "float64") {
    throw ContainerError(ContainerError::Kind::kLayout, "unsupported dtype");
  }

  ArrayStore store;
  store.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::int64_t count = numel(a.shape);
    a.values.resize(static_cast<std::size_t>(count));
    in.seekg(static_cast<std::streamoff>(sizeof magic + sizeof manifest_len + manifest_len +
                                         offset));
    if (!in.read(reinterpret_cast<char*>(a.values.data()),
                 static_cast<std::streamsize>(a.values.size() * sizeof(double)))) {
      throw ContainerError(ContainerError::Kind::kTruncated,
                           "truncated payload for array '" + a.name + "'");
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.values.data());
    char checksum[17];
    std::snprintf(checksum, sizeof checksum, "%016llx",
                  static_cast<unsigned long long>(
                      detail::fnv1a64(bytes, a.values.size() * sizeof(double))));
    if (entry.at("checksum").get<std::string>() != checksum) {
      throw ContainerError(ContainerError::Kind::kChecksum,
                           "checksum mismatch for array '" + a.name + "'");
    }
    if (store.find(a.name)) {
      throw ContainerError(ContainerError::Kind::kLayout,
                           "duplicate array name '" + a.name + "'");
    }
    store.arrays.push_back(std::move(a));
  }
  return store;
}

}  // namespace mcegnn
