// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qkdsim {

using Rng = std::mt19937_64;

/// Deterministic per-run source of independent named substreams.
///
/// Every stochastic entity (Alice's settings, Bob's bases, the channel, each
/// detector, ...) draws from its own stream, so adding draws to one entity
/// never perturbs another, and two processes that agree on the run seed see
/// identical streams.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  [[nodiscard]] Rng stream(std::string_view name) const;
  [[nodiscard]] std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline std::uint8_t random_bit(Rng& rng) { return static_cast<std::uint8_t>(rng() >> 63); }

}  // namespace qkdsim
