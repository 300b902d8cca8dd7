#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace partseg {

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// map failures to exit codes in one place.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

class KindMismatch : public Error {
 public:
  explicit KindMismatch(const std::string& msg) : Error(msg) {}
};

class DuplicateCategory : public Error {
 public:
  explicit DuplicateCategory(const std::string& msg) : Error(msg) {}
};

class UnknownObject : public Error {
 public:
  explicit UnknownObject(const std::string& msg) : Error(msg) {}
};

class MalformedCategory : public Error {
 public:
  explicit MalformedCategory(const std::string& msg) : Error(msg) {}
};

class EmptyMask : public Error {
 public:
  explicit EmptyMask(const std::string& msg) : Error(msg) {}
};

class EmptyCategoryList : public Error {
 public:
  explicit EmptyCategoryList(const std::string& msg) : Error(msg) {}
};

class IncompleteBundle : public Error {
 public:
  explicit IncompleteBundle(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

class LabelOutOfRange : public Error {
 public:
  explicit LabelOutOfRange(const std::string& msg) : Error(msg) {}
};

class ChannelMismatch : public Error {
 public:
  explicit ChannelMismatch(const std::string& msg) : Error(msg) {}
};

class NoDefinedClasses : public Error {
 public:
  explicit NoDefinedClasses(const std::string& msg) : Error(msg) {}
};

class MissingFile : public Error {
 public:
  explicit MissingFile(const std::string& msg) : Error(msg) {}
};

class BadLabelRange : public Error {
 public:
  explicit BadLabelRange(const std::string& msg) : Error(msg) {}
};

class EmptySplit : public Error {
 public:
  explicit EmptySplit(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& key_, const std::string& msg)
      : Error(msg), key(key_) {}
  std::string key;
};

class CorruptArchive : public Error {
 public:
  explicit CorruptArchive(const std::string& msg) : Error(msg) {}
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

// FNV-1a, used for content checksums and for seeding per-name generators.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string to_hex(std::uint64_t v);

// Deterministic RNG. mt19937_64 is bit-stable across platforms but the
// standard distributions are not, so the transforms live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0,1) with 53 bits
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller; pairs are generated together and the spare is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace partseg
