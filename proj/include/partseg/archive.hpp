#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "partseg/tensor.hpp"

namespace partseg {

// Single-file named-array archive:
//   8-byte magic | u64 little-endian manifest length | manifest JSON |
//   raw doubles (platform-native order).
// The manifest records per-array shape, offset (in doubles, relative to the
// payload), element count, and FNV-1a checksum of the raw bytes.
struct Archive {
  std::uint64_t step = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_archive(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& arrays,
                  std::uint64_t step, const std::string& config_hash);

Archive load_archive(const std::string& path);  // CorruptArchive on any damage

}  // namespace partseg
