// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/simengine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "qkdsim/errors.hpp"

namespace qkdsim::sim {
namespace {

using photonics::ClickCause;
using photonics::Detector;
using photonics::from_seconds;
using photonics::to_seconds;

SimTime round_trip_time(double length_km, double group_velocity) {
  return from_seconds(2.0 * length_km * 1e3 / group_velocity);
}

}  // namespace

double TrainSchedule::duty_ratio() const {
  if (train_period.count() <= 0) {
    return 0.0;
  }
  return static_cast<double>(train_size) * static_cast<double>(pulse_period.count()) /
         static_cast<double>(train_period.count());
}

bool TrainSchedule::no_crossing(double storage_len_km, double group_velocity) const {
  const SimTime active = pulse_period * static_cast<std::int64_t>(train_size);
  return active <= round_trip_time(storage_len_km, group_velocity);
}

SimTime TrainSchedule::emission_time(PulseIndex i) const {
  const auto train = static_cast<std::int64_t>(i / train_size);
  const auto slot = static_cast<std::int64_t>(i % train_size);
  return train_period * train + pulse_period * slot;
}

std::uint32_t TrainSchedule::pulses_in(std::uint64_t train) const {
  const PulseIndex first = first_pulse(train);
  if (first >= n_pulses) {
    return 0;
  }
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(train_size, n_pulses - first));
}

double TrainSchedule::elapsed_s() const { return to_seconds(train_period) * static_cast<double>(n_trains); }

TrainSchedule build_schedule(double link_len_km, double storage_len_km, double nu_hz, double group_velocity,
                             bool fixed_train) {
  if (!(storage_len_km > 0.0) || !std::isfinite(storage_len_km)) {
    throw ValidationError("storage line must be longer than 0 km");
  }
  if (!(link_len_km >= 0.0) || !std::isfinite(link_len_km)) {
    throw ValidationError("link length must be >= 0");
  }
  if (!(nu_hz > 0.0) || !(group_velocity > 0.0)) {
    throw ValidationError("repetition frequency and group velocity must be positive");
  }

  const double storage_round_trip_s = 2.0 * storage_len_km * 1e3 / group_velocity;
  const double fitting = storage_round_trip_s * nu_hz;
  auto train_size = static_cast<std::int64_t>(std::floor(kTrainSafetyFactor * fitting + 1e-9));
  if (fixed_train) {
    if (static_cast<double>(kFixedTrainSize) > fitting + 1e-9) {
      throw ValidationError("storage line too short for a 480-pulse train");
    }
    train_size = kFixedTrainSize;
  }
  if (train_size < 1) {
    throw ValidationError("storage line too short for even one pulse at this repetition rate");
  }

  TrainSchedule s;
  s.train_size = static_cast<std::uint32_t>(train_size);
  s.pulse_period = from_seconds(1.0 / nu_hz);
  s.train_period = round_trip_time(link_len_km + storage_len_km, group_velocity);
  return s;
}

LinkUnderTest::LinkUnderTest(double true_length_km, double storage_len_km, double group_velocity,
                             double transmission)
    : round_trip_(round_trip_time(true_length_km + storage_len_km, group_velocity)), transmission_(transmission) {
  if (!(true_length_km >= 0.0) || !(transmission >= 0.0 && transmission <= 1.0)) {
    throw ValidationError("invalid link");
  }
}

LinkUnderTest::LinkUnderTest(const rate::SystemParams& params)
    : LinkUnderTest(params.fiber.length_km, params.storage_len_km, params.fiber.group_velocity_m_per_s,
                    params.fiber.transmission()) {}

bool LinkUnderTest::arrives_in_gate(SimTime gate_start, SimTime gate_width) const {
  return gate_start <= round_trip_ && round_trip_ < gate_start + gate_width;
}

bool LinkUnderTest::probe(SimTime gate_start, SimTime gate_width, double mu_at_alice, double t_bob,
                          const rate::DetectorModel& detector, double efficiency, Rng& rng) const {
  double p_signal = 0.0;
  if (arrives_in_gate(gate_start, gate_width)) {
    p_signal = 1.0 - std::exp(-mu_at_alice * transmission_ * t_bob * efficiency);
  }
  const double p_click = 1.0 - (1.0 - p_signal) * (1.0 - detector.p_dark);
  return bernoulli(rng, p_click);
}

LineCalibration calibrate_line_length(const LinkUnderTest& link, double initial_guess_km, double storage_len_km,
                                      double group_velocity, double t_bob, const rate::DetectorModel& detector,
                                      double efficiency, Rng& rng) {
  if (!(initial_guess_km >= 0.0) || !std::isfinite(initial_guess_km)) {
    throw ValidationError("line-length guess must be >= 0 km");
  }
  detector.validate();

  // Variable attenuator at a low setting: bright pulses.
  constexpr double kBrightMu = 1e4;
  constexpr int kShots = 3;
  constexpr int kHitsNeeded = 2;

  const SimTime gate = from_seconds(detector.gate_width_s);
  auto hit = [&](SimTime start) {
    int clicks = 0;
    for (int s = 0; s < kShots; ++s) {
      clicks += link.probe(start, gate, kBrightMu, t_bob, detector, efficiency, rng) ? 1 : 0;
    }
    return clicks >= kHitsNeeded;
  };

  const double lo_km = std::max(0.0, initial_guess_km - kCalibrationWindowKm);
  const double hi_km = initial_guess_km + kCalibrationWindowKm;
  const SimTime first = round_trip_time(lo_km + storage_len_km, group_velocity) - gate;
  const SimTime last = round_trip_time(hi_km + storage_len_km, group_velocity);

  std::optional<SimTime> coarse;
  for (SimTime d = first; d <= last; d += gate) {
    if (hit(d)) {
      coarse = d;
      break;
    }
  }
  if (!coarse) {
    throw CalibrationError("no reflected-pulse peak within +-5 km of the " + std::to_string(initial_guess_km) +
                           " km estimate");
  }

  const SimTime step = std::max(SimTime{1}, gate / 20);
  std::optional<SimTime> rising;
  std::optional<SimTime> falling;
  for (SimTime d = *coarse - gate; d <= *coarse + gate; d += step) {
    if (hit(d)) {
      if (!rising) rising = d;
      falling = d;
    }
  }
  if (!rising) {
    throw CalibrationError("reflected-pulse peak vanished during the fine scan");
  }

  // Gates starting in (t0 - gate, t0] catch the pulse.
  const SimTime arrival{(rising->count() + gate.count() + falling->count()) / 2};
  LineCalibration cal;
  cal.round_trip = arrival;
  cal.gate_offset = arrival - gate / 2;
  cal.measured_length_km = to_seconds(arrival) * group_velocity / 2.0 / 1e3 - storage_len_km;
  return cal;
}

protocol::PowerBounds PowerMonitor::bounds(double link_transmission) const {
  const double nominal = nominal_output * link_transmission;
  return {nominal * (1.0 - tolerance_rel), nominal * (1.0 + tolerance_rel)};
}

double RunConfig::guess_km() const {
  return calibration_guess_km.value_or(std::round(params.fiber.length_km));
}

void RunConfig::validate() const {
  params.validate();
  detector.validate();
  eve.validate();
  if (n_pulses_total < 1) {
    throw ValidationError("run needs at least one pulse");
  }
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ValidationError("sample fraction must lie in (0, 1]");
  }
  if (!(qber_abort_threshold > 0.0 && qber_abort_threshold <= 0.5)) {
    throw ValidationError("QBER abort threshold must lie in (0, 0.5]");
  }
  if (!(mu_visibility > 0.0) || !std::isfinite(mu_visibility)) {
    throw ValidationError("visibility mean photon number must be positive");
  }
  if (calibration_guess_km && !(*calibration_guess_km >= 0.0)) {
    throw ValidationError("line-length guess must be >= 0 km");
  }
  if (!(power.nominal_output > 0.0) || !(power.noise_rel >= 0.0) || !(power.tolerance_rel > 0.0) ||
      !(power.trojan_extra >= 0.0)) {
    throw ValidationError("invalid power monitor settings");
  }
}

AliceStation::AliceStation(const RunConfig& config, const TrainSchedule& schedule)
    : schedule_(&schedule),
      monitor_(config.power),
      link_transmission_(config.params.fiber.transmission()),
      bounds_(config.power.bounds(link_transmission_)) {
  const RngStreams rs(config.seed);
  settings_rng_ = rs.stream(streams::kAliceSettings);
  monitor_rng_ = rs.stream(streams::kAliceMonitor);
}

std::vector<QuantumFrame> AliceStation::modulate_train(std::uint64_t train) {
  std::vector<QuantumFrame> frames(schedule_->pulses_in(train));
  const PulseIndex first = schedule_->first_pulse(train);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].pulse_index = first + i;
  }
  protocol::draw_alice_settings(frames, settings_rng_);
  return frames;
}

double AliceStation::incoming_power_sample() {
  std::normal_distribution<double> noise(0.0, 1.0);
  const double nominal = monitor_.nominal_output * link_transmission_;
  return nominal * (1.0 + monitor_.noise_rel * noise(monitor_rng_)) + monitor_.trojan_extra;
}

BobStation::BobStation(const RunConfig& config, const TrainSchedule& schedule, const LinkUnderTest& link,
                       const LineCalibration& calibration)
    : schedule_(&schedule),
      mu_(config.params.mu),
      d1_(Detector::D1, config.detector, config.params.eta_bob, config.params.dead_time_s),
      d2_(Detector::D2, config.detector, config.params.eta_bob, config.params.dead_time_s) {
  const SimTime gate = from_seconds(config.detector.gate_width_s);
  path_.channel_transmission = link.arrives_in_gate(calibration.gate_offset, gate) ? link.transmission() : 0.0;
  path_.t_bob = config.params.t_bob;
  path_.visibility = config.params.visibility();

  const RngStreams rs(config.seed);
  bases_rng_ = rs.stream(streams::kBobBases);
  channel_rng_ = rs.stream(streams::kChannel);
  d1_rng_ = rs.stream(streams::kDetectorD1);
  d2_rng_ = rs.stream(streams::kDetectorD2);
}

TrainDetection BobStation::detect_train(std::uint64_t train, std::span<const std::uint8_t> alice_quarter_turns) {
  const std::uint32_t n = schedule_->pulses_in(train);
  if (alice_quarter_turns.size() != n) {
    throw ValidationError("modulation record does not match the train size");
  }

  TrainDetection out;
  out.frames.resize(n);
  const PulseIndex first = schedule_->first_pulse(train);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint8_t qt = alice_quarter_turns[i];
    if (qt > 3) {
      throw ValidationError("phase index out of range");
    }
    out.frames[i].pulse_index = first + i;
    out.frames[i].alice_bit = qt >> 1;
    out.frames[i].alice_basis = qt & 1;
  }
  protocol::draw_bob_bases(out.frames, bases_rng_);

  for (const auto& frame : out.frames) {
    const SimTime t = schedule_->gate_time(frame.pulse_index);
    const auto arrivals = photonics::pulse_arrivals(frame, mu_, path_, channel_rng_);
    const bool live = !d1_.dead_at(t) && !d2_.dead_at(t);
    const auto o1 = d1_.gate(arrivals.d1, t, d1_rng_);
    const auto o2 = d2_.gate(arrivals.d2, t, d2_rng_);
    if (live) {
      ++out.live_gates;
      if (o1.click || o2.click) {
        ++out.live_click_gates;
      }
    }
    const bool coincidence = o1.click && o2.click;
    if (o1.click) {
      out.clicks.push_back({frame.pulse_index, Detector::D1, t, coincidence, o1.cause});
    }
    if (o2.click) {
      out.clicks.push_back({frame.pulse_index, Detector::D2, t, coincidence, o2.cause});
    }
  }
  return out;
}

VisibilityMeasurement measure_visibility(const RunConfig& config, std::uint64_t n_pulses, Rng& rng) {
  config.validate();
  if (n_pulses < 4) {
    throw ValidationError("visibility measurement needs at least one pulse per setting");
  }
  const auto& p = config.params;
  const double dark_lambda = -std::log1p(-config.detector.p_dark);
  const photonics::OpticalPath path{p.fiber.transmission(), p.t_bob, p.visibility()};
  const SimTime period = from_seconds(1.0 / p.nu_hz);
  const std::uint64_t per_setting = n_pulses / 4;

  // (bit, basis) pairs with Bob in the matching basis.
  static constexpr std::pair<int, int> kSettings[4] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};

  VisibilityMeasurement out;
  double variance_sum = 0.0;
  for (const auto& [bit, basis] : kSettings) {
    QuantumFrame frame;
    frame.alice_bit = static_cast<std::uint8_t>(bit);
    frame.alice_basis = static_cast<std::uint8_t>(basis);
    frame.bob_basis = static_cast<std::uint8_t>(basis);
    const Detector right = bit == 0 ? Detector::D1 : Detector::D2;

    photonics::GatedDetector d1(Detector::D1, config.detector, p.eta_bob, 0.0);
    photonics::GatedDetector d2(Detector::D2, config.detector, p.eta_bob, 0.0);
    std::uint64_t c1 = 0;
    std::uint64_t c2 = 0;
    for (std::uint64_t i = 0; i < per_setting; ++i) {
      frame.pulse_index = i;
      const SimTime t = period * static_cast<std::int64_t>(i);
      const auto arrivals = photonics::pulse_arrivals(frame, config.mu_visibility, path, rng);
      c1 += d1.gate(arrivals.d1, t, rng).click ? 1 : 0;
      c2 += d2.gate(arrivals.d2, t, rng).click ? 1 : 0;
    }

    VisibilitySetting s;
    s.alice_quarter_turns = frame.alice_quarter_turns();
    s.bob_basis = basis;
    s.gates = per_setting;
    s.right_counts = right == Detector::D1 ? c1 : c2;
    s.wrong_counts = right == Detector::D1 ? c2 : c1;
    if (s.right_counts + s.wrong_counts == 0) {
      throw ValidationError("visibility setting recorded zero counts");
    }

    // Pile-up corrected mean detections per gate, dark-subtracted.
    const double n = static_cast<double>(per_setting);
    const double f_right = static_cast<double>(s.right_counts) / n;
    const double f_wrong = static_cast<double>(s.wrong_counts) / n;
    const double right_rate = -std::log1p(-f_right) - dark_lambda;
    const double wrong_rate = -std::log1p(-f_wrong) - dark_lambda;
    const auto stats = rate::visibility_stats(right_rate, wrong_rate);
    s.visibility = stats.visibility;
    s.qber_opt = stats.qber_opt;

    const double var_right = f_right / ((1.0 - f_right) * n);
    const double var_wrong = f_wrong / ((1.0 - f_wrong) * n);
    const double total = right_rate + wrong_rate;
    const double dv_right = 2.0 * wrong_rate / (total * total);
    const double dv_wrong = -2.0 * right_rate / (total * total);
    const double var = dv_right * dv_right * var_right + dv_wrong * dv_wrong * var_wrong;
    s.counting_stderr = std::sqrt(var);
    variance_sum += var;
    out.settings.push_back(s);
  }

  const double k = static_cast<double>(out.settings.size());
  double sum = 0.0;
  for (const auto& s : out.settings) sum += s.visibility;
  out.v_mean = sum / k;
  double ss = 0.0;
  for (const auto& s : out.settings) ss += (s.visibility - out.v_mean) * (s.visibility - out.v_mean);
  out.spread_stderr = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
  out.counting_stderr = std::sqrt(variance_sum) / k;
  out.v_stderr = std::max(out.counting_stderr, out.spread_stderr);
  return out;
}

double ExchangeStats::measured_p_click() const {
  return live_gates == 0 ? 0.0 : static_cast<double>(live_click_gates) / static_cast<double>(live_gates);
}

double ExchangeStats::true_qber() const {
  return sifted_bits == 0 ? 0.0 : static_cast<double>(sifted_errors) / static_cast<double>(sifted_bits);
}

const char* to_string(ExchangeStatus status) {
  switch (status) {
    case ExchangeStatus::Completed: return "completed";
    case ExchangeStatus::SecurityAbort: return "security-abort";
    case ExchangeStatus::QberAbort: return "qber-abort";
    case ExchangeStatus::NoKey: return "no-key";
  }
  return "unknown";
}

namespace {

rate::RateReport measured_report(const RunConfig& config, const ExchangeResult& r,
                                 const std::map<PulseIndex, ClickCause>& causes) {
  rate::RateReport m;
  const auto& p = config.params;
  m.transmission = p.fiber.transmission();
  m.prefactor_hz = p.q * p.nu_hz * p.t_bob * p.eta_bob;
  m.p_click = r.stats.measured_p_click();
  m.p_det = m.p_click;
  m.p_coincidence = r.stats.pulses == 0 ? 0.0
                                        : static_cast<double>(r.stats.coincidences) /
                                              static_cast<double>(r.stats.pulses);
  m.eta_duty = r.schedule.duty_ratio();
  m.eta_tau = r.stats.pulses == 0 ? 1.0
                                  : static_cast<double>(r.stats.live_gates) / static_cast<double>(r.stats.pulses);
  m.r_raw_hz = r.stats.elapsed_s > 0.0 ? static_cast<double>(r.stats.sifted_bits) / r.stats.elapsed_s : 0.0;
  m.visibility = p.visibility();
  if (r.estimate.sample_size == 0) {
    return m;
  }

  // Attribute each disclosed error to the cause of Bob's click.
  std::size_t by_cause[3] = {0, 0, 0};
  const auto& sifted = r.sifted.empty() ? r.estimate.remaining : r.sifted;
  std::map<PulseIndex, std::size_t> position;
  for (std::size_t i = 0; i < sifted.size(); ++i) position.emplace(sifted.indices[i], i);
  for (PulseIndex idx : r.estimate.disclosed_indices) {
    auto pos = position.find(idx);
    if (pos == position.end()) continue;
    if (sifted.alice_bits[pos->second] != sifted.bob_bits[pos->second]) {
      ++by_cause[static_cast<int>(causes.at(idx))];
    }
  }
  const double n = static_cast<double>(r.estimate.sample_size);
  m.qber_opt = static_cast<double>(by_cause[static_cast<int>(ClickCause::Photon)]) / n;
  m.qber_dark = static_cast<double>(by_cause[static_cast<int>(ClickCause::Dark)]) / n;
  m.qber_after = static_cast<double>(by_cause[static_cast<int>(ClickCause::Afterpulse)]) / n;
  m.qber_stray = 0.0;
  m.qber_total = std::min(r.estimate.d_hat, 0.5);
  m.qber_clamped = r.estimate.d_hat > 0.5;

  const auto info = rate::info_ab(m.qber_total);
  m.i_ab = info.i_ab;
  m.i_ab_corrected = info.i_ab_corrected;
  m.i_ae = std::min(rate::eve_info(p.fiber.total_loss_db(), p.mu, config.eve), 1.0);
  m.eta_dist = rate::net_rate(1.0, m.qber_total, m.i_ae);
  m.r_net_hz = rate::net_rate(m.r_raw_hz, m.qber_total, m.i_ae);
  return m;
}

}  // namespace

TrainSchedule schedule_for_run(const RunConfig& config, SimTime gate_offset) {
  const auto& p = config.params;
  TrainSchedule s = build_schedule(p.fiber.length_km, p.storage_len_km, p.nu_hz, p.fiber.group_velocity_m_per_s,
                                   config.fixed_train);
  s.gate_offset = gate_offset;
  s.n_pulses = config.n_pulses_total;
  s.n_trains = (config.n_pulses_total + s.train_size - 1) / s.train_size;
  return s;
}

rate::RateReport predict_for_run(const RunConfig& config, const TrainSchedule& schedule) {
  rate::SystemParams params = config.params;
  if (schedule.no_crossing(params.storage_len_km, params.fiber.group_velocity_m_per_s)) {
    params.qber_stray = 0.0;
  }
  return rate::predict(params, config.detector, config.eve);
}

LineCalibration calibrate_for_run(const RunConfig& config, const LinkUnderTest& link) {
  const auto& p = config.params;
  Rng rng = RngStreams(config.seed).stream(streams::kCalibration);
  return calibrate_line_length(link, config.guess_km(), p.storage_len_km, p.fiber.group_velocity_m_per_s, p.t_bob,
                               config.detector, p.eta_bob, rng);
}

ExchangeResult run_exchange(const RunConfig& config, const LinkUnderTest& link, const LineCalibration& calibration) {
  config.validate();
  const RngStreams rs(config.seed);

  ExchangeResult result;
  result.schedule = schedule_for_run(config, calibration.gate_offset);
  auto& schedule = result.schedule;
  if (config.statistically_small()) {
    result.events.emplace_back("warning: fewer than 1e4 pulses, statistics are not meaningful");
  }

  result.predicted = predict_for_run(config, schedule);

  AliceStation alice(config, schedule);
  BobStation bob(config, schedule, link, calibration);

  std::vector<double> power_samples;
  power_samples.reserve(schedule.n_trains);
  std::vector<std::uint8_t> turns;
  std::map<PulseIndex, ClickCause> causes;
  double next_recalibration = kRecalibrationPeriodS;

  for (std::uint64_t train = 0; train < schedule.n_trains; ++train) {
    const auto alice_frames = alice.modulate_train(train);
    turns.resize(alice_frames.size());
    std::transform(alice_frames.begin(), alice_frames.end(), turns.begin(),
                   [](const QuantumFrame& f) { return static_cast<std::uint8_t>(f.alice_quarter_turns()); });
    power_samples.push_back(alice.incoming_power_sample());

    const auto detection = bob.detect_train(train, turns);
    result.stats.live_gates += detection.live_gates;
    result.stats.live_click_gates += detection.live_click_gates;
    result.sifted.append(protocol::sift(detection.frames, detection.clicks));
    for (const auto& c : detection.clicks) {
      causes[c.pulse_index] = c.cause;
      result.stats.coincidences += c.coincidence && c.detector == Detector::D1 ? 1 : 0;
    }
    result.clicks.insert(result.clicks.end(), detection.clicks.begin(), detection.clicks.end());

    const double now = to_seconds(schedule.train_period) * static_cast<double>(train + 1);
    if (now >= next_recalibration) {
      result.events.push_back("recalibration hook at t=" + std::to_string(now) + " s");
      next_recalibration += kRecalibrationPeriodS;
    }
  }

  result.stats.pulses = config.n_pulses_total;
  result.stats.clicks = result.clicks.size();
  result.stats.elapsed_s = schedule.elapsed_s();
  result.stats.sifted_bits = result.sifted.size();
  for (std::size_t i = 0; i < result.sifted.size(); ++i) {
    result.stats.sifted_errors += result.sifted.alice_bits[i] != result.sifted.bob_bits[i] ? 1 : 0;
  }

  result.security = protocol::security_check(result.clicks, config.n_pulses_total, result.predicted.p_coincidence,
                                             power_samples, alice.power_bounds());

  auto abort_with = [&](ExchangeStatus status, std::string reason) {
    result.status = status;
    result.abort_reason = std::move(reason);
    result.measured = measured_report(config, result, causes);
    result.sifted = {};
    result.key = {};
    result.estimate.remaining = {};
    return result;
  };

  if (result.security.verdict == protocol::Verdict::Alert) {
    return abort_with(ExchangeStatus::SecurityAbort, result.security.reason);
  }
  if (result.sifted.empty()) {
    return abort_with(ExchangeStatus::NoKey, "no sifted bits");
  }

  Rng sampling = rs.stream(streams::kAliceSampling);
  result.estimate = protocol::estimate_qber(result.sifted, config.sample_fraction, sampling);
  if (result.estimate.d_hat > config.qber_abort_threshold) {
    return abort_with(ExchangeStatus::QberAbort, "estimated QBER " + std::to_string(result.estimate.d_hat) +
                                                     " above abort threshold");
  }

  result.measured = measured_report(config, result, causes);
  result.key = result.estimate.remaining;
  return result;
}

ExchangeResult simulate(const RunConfig& config) {
  config.validate();
  const LinkUnderTest link(config.params);
  return run_exchange(config, link, calibrate_for_run(config, link));
}

}  // namespace qkdsim::sim
