#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace serbench {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text,
                             std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Seed for an independent RNG stream keyed by (global seed, record, tag).
/// Streams do not depend on the order in which records are processed.
inline std::uint64_t stream_seed(std::uint64_t global_seed,
                                 std::string_view record_id,
                                 std::string_view tag) {
  std::uint64_t h = splitmix64(global_seed);
  h = fnv1a64(record_id, h);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(tag, h);
  return splitmix64(h);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

}  // namespace serbench
