#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fogsim {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Fans a master seed out to named component substreams so that
/// perturbing one component leaves the draws of the others untouched.
class SeedFan {
 public:
  explicit SeedFan(std::uint64_t master) : master_(master) {}

  std::uint64_t seed(std::string_view stream) const {
    return mix64(master_ ^ mix64(fnv1a64(stream)));
  }
  Rng stream(std::string_view name) const { return Rng(seed(name)); }
  std::uint64_t master() const { return master_; }

 private:
  std::uint64_t master_;
};

}  // namespace fogsim
