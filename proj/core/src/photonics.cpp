// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/photonics.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "qkdsim/errors.hpp"

namespace qkdsim::photonics {

SimTime from_seconds(double seconds) { return SimTime{std::llround(seconds * 1e12)}; }

double to_seconds(SimTime t) { return static_cast<double>(t.count()) * 1e-12; }

double QuantumFrame::alice_phase() const { return alice_quarter_turns() * std::numbers::pi / 2.0; }

double QuantumFrame::bob_phase() const { return bob_quarter_turns() * std::numbers::pi / 2.0; }

RoutingProbs routing_probs(double delta_phi, double visibility) {
  if (!(visibility >= 0.0 && visibility <= 1.0)) {
    throw ValidationError("visibility must lie in [0, 1]");
  }
  const double d1 = 0.5 * (1.0 + visibility * std::cos(delta_phi));
  return RoutingProbs{d1, 1.0 - d1};
}

RoutingProbs routing_probs_quarter(int quarter_turns, double visibility) {
  if (!(visibility >= 0.0 && visibility <= 1.0)) {
    throw ValidationError("visibility must lie in [0, 1]");
  }
  static constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
  const double d1 = 0.5 * (1.0 + visibility * kCos[((quarter_turns % 4) + 4) % 4]);
  return RoutingProbs{d1, 1.0 - d1};
}

Arrivals pulse_arrivals(const QuantumFrame& frame, double mu, const OpticalPath& path, Rng& rng) {
  if (!(mu > 0.0)) {
    throw ValidationError("mean photon number must be positive");
  }
  const double survive = path.channel_transmission * path.t_bob;
  if (!(survive >= 0.0 && survive <= 1.0)) {
    throw ValidationError("channel transmission must lie in [0, 1]");
  }

  std::poisson_distribution<std::uint32_t> photons(mu);
  const std::uint32_t emitted = photons(rng);
  if (emitted == 0 || survive == 0.0) {
    return {};
  }
  std::binomial_distribution<std::uint32_t> thinning(emitted, survive);
  const std::uint32_t arriving = thinning(rng);

  const auto route = routing_probs_quarter(frame.delta_quarter_turns(), path.visibility);
  Arrivals out;
  for (std::uint32_t i = 0; i < arriving; ++i) {
    if (bernoulli(rng, route.d1)) {
      ++out.d1;
    } else {
      ++out.d2;
    }
  }
  return out;
}

GatedDetector::GatedDetector(Detector id, const rate::DetectorModel& model, double efficiency,
                             double dead_time_s)
    : id_(id),
      p_dark_(model.p_dark),
      efficiency_(efficiency),
      afterpulse_(model.afterpulse),
      dead_time_(from_seconds(dead_time_s)),
      history_horizon_(from_seconds(10.0 * model.afterpulse.time_const_s)) {
  model.validate();
  if (!(efficiency > 0.0 && efficiency <= 1.0)) {
    throw ValidationError("detector efficiency must lie in (0, 1]");
  }
  if (!(dead_time_s >= 0.0)) {
    throw ValidationError("dead time must be >= 0");
  }
}

void GatedDetector::prune(SimTime now) {
  while (!history_.empty() && now - history_.front() > history_horizon_) {
    history_.pop_front();
  }
}

double GatedDetector::afterpulse_probability(SimTime t) const {
  if (afterpulse_.amplitude == 0.0) {
    return 0.0;
  }
  double p = 0.0;
  for (SimTime avalanche : history_) {
    if (avalanche < t && t - avalanche <= history_horizon_) {
      p += afterpulse_.probability_at(to_seconds(t - avalanche));
    }
  }
  return std::min(p, 1.0);
}

GateOutcome GatedDetector::gate(std::uint32_t n_photons, SimTime t, Rng& rng) {
  if (t <= last_gate_) {
    throw ValidationError("detector gate times must be strictly increasing");
  }
  last_gate_ = t;
  if (dead_at(t)) {
    return {};
  }
  prune(t);

  GateOutcome out;
  if (n_photons > 0 && bernoulli(rng, 1.0 - std::pow(1.0 - efficiency_, n_photons))) {
    out = {true, ClickCause::Photon};
  } else if (p_dark_ > 0.0 && bernoulli(rng, p_dark_)) {
    out = {true, ClickCause::Dark};
  } else if (!history_.empty() && bernoulli(rng, afterpulse_probability(t))) {
    out = {true, ClickCause::Afterpulse};
  }

  if (out.click) {
    history_.push_back(t);
    dead_until_ = t + dead_time_;
  }
  return out;
}

}  // namespace qkdsim::photonics
