#pragma once

#include <cstdint>
#include <random>

namespace bpeq {

// Identifier written into reports so resampling results can be reproduced
// by any implementation of the same generator scheme.
inline constexpr const char* kRngAlgorithm = "mt19937_64 seeded per stream by splitmix64(seed + 0x9e3779b97f4a7c15*(stream+1)); unbiased rejection index draw";

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator for resample `stream` under `seed`.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
}

// Uniform integer in [0, n) by rejection; identical on every platform,
// unlike std::uniform_int_distribution.
inline std::uint64_t uniform_index(std::mt19937_64& gen, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r = gen();
  while (r >= limit) {
    r = gen();
  }
  return r % n;
}

}  // namespace bpeq
