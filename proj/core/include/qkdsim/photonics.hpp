// SPDX-License-Identifier: Apache-2.0
//
// Per-pulse stochastic models: weak-coherent photon statistics, fibre and
// receiver thinning, interferometric routing to the two detectors, and the
// gated InGaAs APD with dark counts, afterpulses and dead time.
#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <limits>

#include "qkdsim/rate_model.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim::photonics {

using PulseIndex = std::uint64_t;

/// Simulated time, integer picoseconds.
using SimTime = std::chrono::duration<std::int64_t, std::pico>;

SimTime from_seconds(double seconds);
double to_seconds(SimTime t);

enum class Detector : std::uint8_t { D1 = 0, D2 = 1 };

/// Settings of one pulse. Phases are multiples of pi/2 and derived from the
/// bits, so they can never disagree with them.
struct QuantumFrame {
  PulseIndex pulse_index = 0;
  std::uint8_t alice_bit = 0;
  std::uint8_t alice_basis = 0;
  std::uint8_t bob_basis = 0;

  /// Alice's phase in quarter turns: basis + 2 * bit.
  [[nodiscard]] int alice_quarter_turns() const { return alice_basis + 2 * alice_bit; }
  [[nodiscard]] int bob_quarter_turns() const { return bob_basis; }
  [[nodiscard]] double alice_phase() const;
  [[nodiscard]] double bob_phase() const;
  [[nodiscard]] bool compatible() const { return alice_basis == bob_basis; }
  /// Alice's phase minus Bob's, in quarter turns modulo 4.
  [[nodiscard]] int delta_quarter_turns() const { return (alice_quarter_turns() - bob_quarter_turns() + 4) % 4; }
};

enum class ClickCause : std::uint8_t { Photon, Dark, Afterpulse };

struct ClickRecord {
  PulseIndex pulse_index = 0;
  Detector detector = Detector::D1;
  SimTime time{0};
  bool coincidence = false;
  /// Simulator ground truth; never part of any transcript.
  ClickCause cause = ClickCause::Photon;

  [[nodiscard]] double time_s() const { return to_seconds(time); }
};

struct RoutingProbs {
  double d1 = 0.0;
  double d2 = 0.0;
};

RoutingProbs routing_probs(double delta_phi, double visibility);
/// Same as routing_probs() for delta_phi = quarter_turns * pi/2, with exact cosines.
RoutingProbs routing_probs_quarter(int quarter_turns, double visibility);

/// Transmission from Alice's output to Bob's detectors.
struct OpticalPath {
  double channel_transmission = 1.0;
  double t_bob = 1.0;
  double visibility = 1.0;
};

struct Arrivals {
  std::uint32_t d1 = 0;
  std::uint32_t d2 = 0;
};

/// Poisson(mu) photons, thinned by channel and receiver transmission, each
/// survivor routed independently by the interference probabilities.
Arrivals pulse_arrivals(const QuantumFrame& frame, double mu, const OpticalPath& path, Rng& rng);

struct GateOutcome {
  bool click = false;
  ClickCause cause = ClickCause::Photon;
};

/// One gated avalanche photodiode. Single owner; gate times must increase.
class GatedDetector {
 public:
  GatedDetector(Detector id, const rate::DetectorModel& model, double efficiency, double dead_time_s);

  GateOutcome gate(std::uint32_t n_photons, SimTime t, Rng& rng);

  /// True when a gate at t would be suppressed by dead time.
  [[nodiscard]] bool dead_at(SimTime t) const { return t < dead_until_; }
  /// Summed afterpulse probability a gate at t would see.
  [[nodiscard]] double afterpulse_probability(SimTime t) const;

  [[nodiscard]] Detector id() const { return id_; }
  [[nodiscard]] SimTime dead_until() const { return dead_until_; }
  [[nodiscard]] std::size_t history_size() const { return history_.size(); }
  [[nodiscard]] double efficiency() const { return efficiency_; }

 private:
  void prune(SimTime now);

  Detector id_;
  double p_dark_;
  double efficiency_;
  rate::AfterpulseProfile afterpulse_;
  SimTime dead_time_;
  SimTime history_horizon_;
  SimTime dead_until_{std::numeric_limits<std::int64_t>::min()};
  SimTime last_gate_{std::numeric_limits<std::int64_t>::min()};
  std::deque<SimTime> history_;
};

}  // namespace qkdsim::photonics
