#pragma once

#include <cstdint>
#include <random>

namespace dtok {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent per-component streams
/// from the single root seed: derive_seed(root, stream, index).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0) {
  return mix64(mix64(root ^ mix64(stream)) + index);
}

// Named streams for derive_seed.
inline constexpr std::uint64_t kStreamSemanticInit = 1;
inline constexpr std::uint64_t kStreamTextureInit = 2;
inline constexpr std::uint64_t kStreamSemanticTrain = 3;
inline constexpr std::uint64_t kStreamTextureTrain = 4;
inline constexpr std::uint64_t kStreamInitSample = 5;
inline constexpr std::uint64_t kStreamConcentration = 6;

/// Uniform double in [0, 1) with 53 random bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection; portable across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace dtok
