#pragma once

#include <cstdint>
#include <random>

namespace sgfnn {

// Stream tags keep the sub-seeds of different pipeline stages disjoint.
enum class Stream : std::uint32_t {
  InitialPoint = 1,
  Brownian = 2,
  Batches = 3,
  Init = 4,
  Prediction = 5,
  Truth = 6,
  Holdout = 7,
};

/// Deterministic sub-seed for (seed, stream, index). Uses std::seed_seq, whose mixing
/// algorithm is fixed by the standard, so results do not depend on worker scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::mt19937_64 make_engine(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return std::mt19937_64(derive_seed(seed, stream, index));
}

}  // namespace sgfnn
