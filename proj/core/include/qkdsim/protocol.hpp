// SPDX-License-Identifier: Apache-2.0
//
// BB84 logic above the physics: random settings, sifting, sampled error
// estimation, and the coincidence / incoming-power security monitors.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qkdsim/photonics.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim::protocol {

using photonics::ClickRecord;
using photonics::Detector;
using photonics::PulseIndex;
using photonics::QuantumFrame;

/// Bit decoded from a lone click: a phase difference of 0 interferes
/// constructively into D1.
inline constexpr std::uint8_t kBitForD1 = 0;

inline std::uint8_t bit_for(Detector d) {
  return d == Detector::D1 ? kBitForD1 : static_cast<std::uint8_t>(1 - kBitForD1);
}

struct SiftedKey {
  std::vector<PulseIndex> indices;
  std::vector<std::uint8_t> alice_bits;
  std::vector<std::uint8_t> bob_bits;

  [[nodiscard]] std::size_t size() const { return indices.size(); }
  [[nodiscard]] bool empty() const { return indices.empty(); }
  void append(const SiftedKey& other);
  /// Checks the equal-length and strictly-increasing-index invariants.
  void validate() const;

  friend bool operator==(const SiftedKey&, const SiftedKey&) = default;
};

/// Alice's bit and basis for pulses [first, first + n).
void draw_alice_settings(std::span<QuantumFrame> frames, Rng& alice_rng);
/// Bob's basis for the same frames.
void draw_bob_bases(std::span<QuantumFrame> frames, Rng& bob_rng);

/// Frames first_index .. first_index + n - 1 with independent uniform settings.
std::vector<QuantumFrame> assign_settings(std::size_t n_pulses, Rng& alice_rng, Rng& bob_rng,
                                          PulseIndex first_index = 0);

/// Pulses with exactly one click, in pulse order.
struct SingleClick {
  PulseIndex pulse_index;
  Detector detector;
};

/// Collapses click records into single-click pulses; coincidences are dropped.
/// Throws on two records for the same (pulse, detector).
std::vector<SingleClick> single_clicks(std::span<const ClickRecord> clicks);

/// frames must be sorted by pulse index and cover every clicked pulse.
SiftedKey sift(std::span<const QuantumFrame> frames, std::span<const ClickRecord> clicks);

/// Alice's half of sifting over the wire: which reported pulses had her basis.
std::vector<std::uint8_t> compatible_mask(std::span<const QuantumFrame> alice_frames,
                                          std::span<const PulseIndex> reported,
                                          std::span<const std::uint8_t> bob_bases);

inline constexpr double kDefaultSampleFraction = 0.10;

/// Sorted positions into a key of key_size, chosen uniformly without replacement.
std::vector<std::size_t> choose_sample(std::size_t key_size, double sample_fraction, Rng& rng);

struct QberEstimate {
  double d_hat = 0.0;
  double ci_2sigma = 0.0;  // 2 * binomial sigma of d_hat
  std::size_t sample_size = 0;
  std::size_t errors = 0;
  bool exceeds_half = false;  // estimate above 0.5; unusable for rate formulas
  std::vector<PulseIndex> disclosed_indices;
  SiftedKey remaining;
};

QberEstimate qber_from_counts(std::size_t errors, std::size_t sample_size);

QberEstimate estimate_qber(const SiftedKey& key, double sample_fraction, Rng& rng);

enum class Verdict : std::uint8_t { Ok, Alert };

struct PowerBounds {
  double lo = 0.0;
  double hi = 0.0;
};

struct SecurityReport {
  std::size_t coincidence_count = 0;
  double coincidence_expected = 0.0;
  double coincidence_sigma = 0.0;
  double mean_incoming_power = 0.0;
  PowerBounds power_bounds{};
  std::size_t power_violations = 0;
  Verdict verdict = Verdict::Ok;
  std::string reason;
};

inline constexpr double kCoincidenceAlarmSigma = 5.0;

/// Counts coincidence pulses against a Poisson expectation and checks every
/// incoming-power sample against the calibrated bounds.
SecurityReport security_check(std::span<const ClickRecord> clicks, std::uint64_t n_gates,
                              double expected_coincidence_per_gate, std::span<const double> power_samples,
                              const PowerBounds& bounds);

}  // namespace qkdsim::protocol
