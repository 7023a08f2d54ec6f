#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace chimle {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the substream identified by `keys` under `seed`. Distinct key
/// tuples give unrelated streams, so work can be split or reordered without
/// changing what any one consumer draws.
inline std::uint64_t substream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng(substream_seed(seed, keys));
}

}  // namespace chimle
