#pragma once

#include <cstdint>
#include <random>

namespace fmpred {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Every random task draws from its own stream so results do not depend on
// execution order or worker count: seed = mix(mix(master ^ mix(stream)) + index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(stream)) + index);
}

namespace streams {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kClustering = 2;
inline constexpr std::uint64_t kBootstrap = 3;
inline constexpr std::uint64_t kFolds = 4;
inline constexpr std::uint64_t kSelectK = 5;
inline constexpr std::uint64_t kReplicate = 6;
inline constexpr std::uint64_t kKMeans = 7;
}  // namespace streams

}  // namespace fmpred
