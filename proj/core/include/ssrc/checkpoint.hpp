#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssrc/nets.hpp"
#include "ssrc/tensor.hpp"

namespace ssrc {

// Binary checkpoint, little-endian host layout:
//   "SSRCCKPT" | u32 version | u32 scalar bytes
//   u64 #metadata { u32 len, key, u64 len, value }
//   u64 #tensors  { u32 len, name, u32 rank, i64 dims[rank], raw values }
//   u64 FNV-1a hash of every preceding byte
// Values are stored verbatim, so a save/load round trip is bit-exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> metadata;
  std::vector<NamedParameter> tensors;

  void add(const std::string& prefix, const ParameterList& params);
  const Tensor& tensor(const std::string& name) const;
  bool contains(const std::string& name) const;
  // Copies stored values into `params` (matched by prefix + name and shape).
  void restore(const std::string& prefix, const ParameterList& params) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace ssrc
