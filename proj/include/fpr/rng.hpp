#pragma once
// Seed derivation. Every random draw in a run comes from a stream keyed by
// (master seed, purpose, round, index), so results do not depend on the
// order or thread in which chains are advanced.

#include <cstdint>
#include <random>

namespace fpr {

enum class StreamPurpose : std::uint64_t {
  InitDesigns = 1,
  InitFailures = 2,
  DesignStep = 3,
  FailureStep = 4,
  Resample = 5,
  StressTest = 6,
  TestSet = 7,
  GradCheck = 8,
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, StreamPurpose purpose, std::uint64_t round,
                                 std::uint64_t index) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ round);
  return splitmix64(h ^ index);
}

inline std::mt19937_64 make_stream(std::uint64_t master, StreamPurpose purpose,
                                   std::uint64_t round = 0, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(master, purpose, round, index));
}

}  // namespace fpr
