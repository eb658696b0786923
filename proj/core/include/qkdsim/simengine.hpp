// SPDX-License-Identifier: Apache-2.0
//
// Orchestration of a full plug&play key exchange: pulse-train scheduling
// against the storage line, line-length calibration, visibility runs, and the
// Monte Carlo exchange with side-by-side measured and predicted reports.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qkdsim/photonics.hpp"
#include "qkdsim/protocol.hpp"
#include "qkdsim/rate_model.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim::sim {

using photonics::ClickRecord;
using photonics::PulseIndex;
using photonics::QuantumFrame;
using photonics::SimTime;

inline constexpr std::uint32_t kFixedTrainSize = 480;
inline constexpr double kTrainSafetyFactor = 0.98;
inline constexpr double kDefaultQberAbort = 0.15;
/// Operator's line-length estimate must be within this of the truth.
inline constexpr double kCalibrationWindowKm = 5.0;
inline constexpr double kRecalibrationPeriodS = 600.0;

struct TrainSchedule {
  std::uint32_t train_size = 0;
  SimTime pulse_period{0};
  SimTime train_period{0};
  SimTime gate_offset{0};  // start of Bob's gate relative to emission
  std::uint64_t n_trains = 0;
  std::uint64_t n_pulses = 0;

  /// Active emission time over train period.
  [[nodiscard]] double duty_ratio() const;
  /// True when a train fits in the storage-line round trip, so outgoing
  /// bright pulses never cross returning weak ones.
  [[nodiscard]] bool no_crossing(double storage_len_km, double group_velocity) const;
  [[nodiscard]] SimTime emission_time(PulseIndex i) const;
  [[nodiscard]] SimTime gate_time(PulseIndex i) const { return emission_time(i) + gate_offset; }
  [[nodiscard]] PulseIndex first_pulse(std::uint64_t train) const { return train * train_size; }
  [[nodiscard]] std::uint32_t pulses_in(std::uint64_t train) const;
  [[nodiscard]] double elapsed_s() const;
};

TrainSchedule build_schedule(double link_len_km, double storage_len_km, double nu_hz, double group_velocity,
                             bool fixed_train = false);

/// The fibre as the instruments see it: its length is only observable
/// through reflected bright pulses.
class LinkUnderTest {
 public:
  LinkUnderTest(double true_length_km, double storage_len_km, double group_velocity, double transmission);
  explicit LinkUnderTest(const rate::SystemParams& params);

  /// One bright pulse fired with Bob's gate open over [gate_start, gate_start + gate_width).
  bool probe(SimTime gate_start, SimTime gate_width, double mu_at_alice, double t_bob,
             const rate::DetectorModel& detector, double efficiency, Rng& rng) const;
  [[nodiscard]] bool arrives_in_gate(SimTime gate_start, SimTime gate_width) const;
  [[nodiscard]] double transmission() const { return transmission_; }

 private:
  SimTime round_trip_;
  double transmission_;
};

struct LineCalibration {
  double measured_length_km = 0.0;
  SimTime round_trip{0};
  SimTime gate_offset{0};
};

/// Coarse gate-width scan over +-5 km around the guess, then a fine scan of
/// the peak edges. Throws CalibrationError when no peak is found.
LineCalibration calibrate_line_length(const LinkUnderTest& link, double initial_guess_km, double storage_len_km,
                                      double group_velocity, double t_bob, const rate::DetectorModel& detector,
                                      double efficiency, Rng& rng);

enum class RunMode : std::uint8_t { SingleProcess, Networked };

struct PowerMonitor {
  double nominal_output = 1.0;  // Bob's bright-pulse power, arbitrary linear units
  double noise_rel = 0.01;
  double tolerance_rel = 0.10;
  double trojan_extra = 0.0;  // injected probe power added to every sample

  [[nodiscard]] protocol::PowerBounds bounds(double link_transmission) const;
};

struct RunConfig {
  rate::SystemParams params{};
  rate::DetectorModel detector{};
  rate::EveModel eve{};
  std::uint64_t n_pulses_total = 1'000'000;
  std::uint64_t seed = 1;
  double sample_fraction = protocol::kDefaultSampleFraction;
  RunMode mode = RunMode::SingleProcess;
  bool fixed_train = false;
  double qber_abort_threshold = kDefaultQberAbort;
  double mu_visibility = 2.0;
  std::optional<double> calibration_guess_km;
  PowerMonitor power{};

  void validate() const;
  /// Below 1e4 pulses the statistics in reports are not meaningful.
  [[nodiscard]] bool statistically_small() const { return n_pulses_total < 10'000; }
  [[nodiscard]] double guess_km() const;
};

/// Canonical key=value text of a RunConfig (PARAMS payload); parse is its inverse.
std::string serialize_run_config(const RunConfig& config);
RunConfig parse_run_config(std::string_view text);
/// "5:0.06,10:0.14,20:0.40" -> {{5, 0.06}, {10, 0.14}, {20, 0.40}}
std::vector<std::pair<double, double>> parse_anchor_list(std::string_view key, std::string_view text);

/// Stream names of the per-run RNG.
namespace streams {
inline constexpr const char* kAliceSettings = "alice.settings";
inline constexpr const char* kAliceMonitor = "alice.monitor";
inline constexpr const char* kAliceSampling = "alice.sampling";
inline constexpr const char* kBobBases = "bob.bases";
inline constexpr const char* kChannel = "channel";
inline constexpr const char* kDetectorD1 = "detector.d1";
inline constexpr const char* kDetectorD2 = "detector.d2";
inline constexpr const char* kCalibration = "calibration";
inline constexpr const char* kVisibility = "visibility";
inline constexpr const char* kSession = "session";
}  // namespace streams

/// Alice's box: modulator settings and the incoming-power monitor.
class AliceStation {
 public:
  AliceStation(const RunConfig& config, const TrainSchedule& schedule);

  /// Frames for one train with Alice's bit and basis set (bob_basis = 0).
  std::vector<QuantumFrame> modulate_train(std::uint64_t train);
  double incoming_power_sample();
  [[nodiscard]] protocol::PowerBounds power_bounds() const { return bounds_; }

 private:
  const TrainSchedule* schedule_;
  PowerMonitor monitor_;
  double link_transmission_;
  protocol::PowerBounds bounds_;
  Rng settings_rng_;
  Rng monitor_rng_;
};

struct TrainDetection {
  std::vector<QuantumFrame> frames;
  std::vector<ClickRecord> clicks;
  std::uint64_t live_gates = 0;        // both detectors live
  std::uint64_t live_click_gates = 0;  // of which at least one clicked
};

/// Bob's box: source, detectors and the simulated quantum channel.
class BobStation {
 public:
  BobStation(const RunConfig& config, const TrainSchedule& schedule, const LinkUnderTest& link,
             const LineCalibration& calibration);

  /// alice_quarter_turns[i] = basis + 2 * bit of pulse first_pulse(train) + i.
  TrainDetection detect_train(std::uint64_t train, std::span<const std::uint8_t> alice_quarter_turns);

 private:
  const TrainSchedule* schedule_;
  double mu_;
  photonics::OpticalPath path_;
  Rng bases_rng_;
  Rng channel_rng_;
  Rng d1_rng_;
  Rng d2_rng_;
  photonics::GatedDetector d1_;
  photonics::GatedDetector d2_;
};

struct VisibilitySetting {
  int alice_quarter_turns = 0;
  int bob_basis = 0;
  std::uint64_t gates = 0;
  std::uint64_t right_counts = 0;
  std::uint64_t wrong_counts = 0;
  double visibility = 0.0;
  double qber_opt = 0.0;
  double counting_stderr = 0.0;
};

struct VisibilityMeasurement {
  double v_mean = 0.0;
  double v_stderr = 0.0;
  double counting_stderr = 0.0;
  double spread_stderr = 0.0;
  std::vector<VisibilitySetting> settings;
};

/// Strong pulses with fixed compatible phases, dead time disabled; rates are
/// pile-up corrected and dark-subtracted before the visibility formula.
VisibilityMeasurement measure_visibility(const RunConfig& config, std::uint64_t n_pulses, Rng& rng);

enum class ExchangeStatus : std::uint8_t { Completed, SecurityAbort, QberAbort, NoKey };

struct ExchangeStats {
  std::uint64_t pulses = 0;
  std::uint64_t live_gates = 0;
  std::uint64_t live_click_gates = 0;
  std::uint64_t clicks = 0;
  std::uint64_t coincidences = 0;
  std::uint64_t sifted_bits = 0;    // before sampling
  std::uint64_t sifted_errors = 0;  // ground truth over the whole sifted key
  double elapsed_s = 0.0;

  [[nodiscard]] double measured_p_click() const;
  [[nodiscard]] double true_qber() const;
};

struct ExchangeResult {
  ExchangeStatus status = ExchangeStatus::Completed;
  std::string abort_reason;
  protocol::SiftedKey sifted;  // full sifted key before sampling; empty after an abort
  protocol::SiftedKey key;     // sifted key after sacrificing the sample; empty after an abort
  protocol::QberEstimate estimate;
  rate::RateReport measured;
  rate::RateReport predicted;
  protocol::SecurityReport security;
  TrainSchedule schedule;
  ExchangeStats stats;
  std::vector<ClickRecord> clicks;
  std::vector<std::string> events;
};

/// Schedule of a whole run: trains sized for the storage line, gate offset
/// from calibration, enough trains for n_pulses_total.
TrainSchedule schedule_for_run(const RunConfig& config, SimTime gate_offset);

/// Rate-model prediction for a run; stray light drops out when trains never
/// cross in the storage line.
rate::RateReport predict_for_run(const RunConfig& config, const TrainSchedule& schedule);

/// Calibration as performed by simulate(), on the calibration stream.
LineCalibration calibrate_for_run(const RunConfig& config, const LinkUnderTest& link);

ExchangeResult run_exchange(const RunConfig& config, const LinkUnderTest& link, const LineCalibration& calibration);

/// Calibrates against the configured link, then runs the exchange.
ExchangeResult simulate(const RunConfig& config);

const char* to_string(ExchangeStatus status);

}  // namespace qkdsim::sim
