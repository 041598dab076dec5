#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace baeeeg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent substream keyed by (master, path...). The result
/// depends only on the key, never on call order.
inline std::uint64_t substream_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(substream_seed(master, path));
}

// Stream tags.
inline constexpr std::uint64_t kConductivityStream = 1;
inline constexpr std::uint64_t kLocationStream = 2;
inline constexpr std::uint64_t kTrialStream = 3;

}  // namespace baeeeg
