#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "partseg/common.hpp"

namespace partseg {

// Flat dotted-key configuration. Every key must exist in the registry;
// unknown keys are rejected with the offending key named.
class RunConfig {
 public:
  struct KeyInfo {
    std::string default_value;
    std::string help;
  };

  static const std::map<std::string, KeyInfo>& registry();

  RunConfig();  // registry defaults

  void load_file(const std::string& path);
  void set_kv(const std::string& assignment);  // "key=value"
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-separated

  std::string echo() const;  // sorted "key = value" lines
  std::string hash() const;  // hex FNV-1a of the echo

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace partseg
