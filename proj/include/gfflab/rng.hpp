#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "gfflab/errors.hpp"

namespace gfflab {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct SeedPath {
  std::string_view experiment;
  std::uint64_t replica = 0;
  std::uint32_t stream = 0;
};

inline constexpr std::uint32_t kMaxStreams = 1u << 16;

/// Stateless stream seed. For a fixed (master, experiment) the map
/// (replica, stream) -> seed is injective as long as replica < 2^48 and
/// stream < 2^16: the counter is packed into one word and pushed through a
/// bijection keyed by the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, const SeedPath& path) {
  if (path.stream >= kMaxStreams) throw RangeError("derive_seed: stream index >= 2^16");
  if (path.replica >= (std::uint64_t{1} << 48)) throw RangeError("derive_seed: replica index >= 2^48");
  const std::uint64_t key = mix64(mix64(master) ^ fnv1a(path.experiment));
  const std::uint64_t counter = (path.replica << 16) | path.stream;
  return mix64(mix64(counter ^ key) + key);
}

inline Rng make_rng(std::uint64_t master, const SeedPath& path) {
  return Rng(derive_seed(master, path));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace gfflab
