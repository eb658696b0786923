// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "qkdsim/errors.hpp"
#include "qkdsim/photonics.hpp"

using namespace qkdsim;
using namespace qkdsim::photonics;

namespace {

constexpr double kPi = std::numbers::pi;

// |observed - expected| within k binomial sigmas of n trials at p.
bool within_sigma(double observed_count, double n, double p, double k = 3.0) {
  const double sigma = std::sqrt(n * p * (1.0 - p));
  return std::abs(observed_count - n * p) <= k * sigma;
}

}  // namespace

TEST_CASE("sim time is integer picoseconds") {
  CHECK(from_seconds(4e-6).count() == 4'000'000);
  CHECK(from_seconds(2e-7).count() == 200'000);
  CHECK(to_seconds(SimTime{1'000'000'000'000}) == 1.0);
}

TEST_CASE("frame phases follow the bits") {
  for (std::uint8_t bit : {0, 1}) {
    for (std::uint8_t ba : {0, 1}) {
      for (std::uint8_t bb : {0, 1}) {
        QuantumFrame f{0, bit, ba, bb};
        CHECK(f.alice_phase() == doctest::Approx(ba * kPi / 2 + bit * kPi));
        CHECK(f.bob_phase() == doctest::Approx(bb * kPi / 2));
        CHECK(f.compatible() == (ba == bb));
      }
    }
  }
}

TEST_CASE("routing probabilities") {
  auto r = routing_probs(0.0, 1.0);
  CHECK(r.d1 == 1.0);
  CHECK(r.d2 == 0.0);
  r = routing_probs(kPi / 2, 0.7);
  CHECK(r.d1 == doctest::Approx(0.5));
  r = routing_probs(kPi, 0.994);
  CHECK(r.d1 == doctest::Approx(0.003).epsilon(1e-9));
  CHECK(r.d2 == doctest::Approx(0.997).epsilon(1e-9));
  CHECK(routing_probs_quarter(1, 0.3).d1 == 0.5);
  CHECK(routing_probs_quarter(2, 0.994).d1 == doctest::Approx(0.003).epsilon(1e-12));
  CHECK_THROWS_AS(routing_probs(0.0, 1.2), ValidationError);

  // Sums to one exactly.
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto p = routing_probs(20.0 * uniform01(rng) - 10.0, uniform01(rng));
    CHECK(p.d1 + p.d2 == 1.0);
  }
  // The quarter-turn table agrees with the cosine form.
  for (int q = -4; q < 8; ++q) {
    CHECK(routing_probs_quarter(q, 0.9).d1 == doctest::Approx(routing_probs(q * kPi / 2, 0.9).d1).epsilon(1e-12));
  }
}

TEST_CASE("photon arrivals") {
  Rng rng(5);
  QuantumFrame f{0, 0, 0, 0};
  for (int i = 0; i < 10000; ++i) {
    const auto a = pulse_arrivals(f, 0.2, OpticalPath{0.0, 0.6, 1.0}, rng);
    CHECK(a.d1 + a.d2 == 0);
  }

  // Mean d1 count is mu * t_B; d2 never fires at V = 1, delta 0.
  const int n = 1'000'000;
  std::uint64_t d1 = 0;
  std::uint64_t d2 = 0;
  for (int i = 0; i < n; ++i) {
    const auto a = pulse_arrivals(f, 0.2, OpticalPath{1.0, 0.6, 1.0}, rng);
    d1 += a.d1;
    d2 += a.d2;
  }
  const double mean = 0.2 * 0.6;
  const double sigma = std::sqrt(mean / n);  // thinned Poisson
  CHECK(std::abs(static_cast<double>(d1) / n - mean) <= 3.0 * sigma);
  CHECK(d2 == 0);

  // Compatible bases at V = 1: no pulse ever routes photons to both sides.
  QuantumFrame flipped{0, 1, 1, 1};
  for (int i = 0; i < 100000; ++i) {
    const auto a = pulse_arrivals(flipped, 3.0, OpticalPath{1.0, 1.0, 1.0}, rng);
    CHECK(a.d1 == 0);
  }
  CHECK_THROWS_AS(pulse_arrivals(f, 0.0, OpticalPath{}, rng), ValidationError);
}

TEST_CASE("gated detector basics") {
  rate::DetectorModel quiet;
  quiet.p_dark = 0.0;
  quiet.afterpulse.amplitude = 0.0;
  Rng rng(9);

  GatedDetector d(Detector::D1, quiet, 1.0, 4e-6);
  CHECK_FALSE(d.gate(0, SimTime{1000}, rng).click);
  CHECK(d.gate(1, SimTime{2000}, rng).click);
  CHECK(d.dead_at(SimTime{2000 + 3'999'999}));
  CHECK_FALSE(d.dead_at(SimTime{2000 + 4'000'000}));
  // Suppressed without sampling during dead time.
  CHECK_FALSE(d.gate(5, SimTime{3000}, rng).click);
  CHECK(d.gate(1, SimTime{2000 + 4'000'000}, rng).click);
  CHECK_THROWS_AS(d.gate(0, SimTime{10}, rng), ValidationError);

  CHECK_THROWS_AS(GatedDetector(Detector::D2, quiet, 0.0, 4e-6), ValidationError);
  CHECK_THROWS_AS(GatedDetector(Detector::D2, quiet, 0.1, -1.0), ValidationError);
}

TEST_CASE("dark count frequency") {
  rate::DetectorModel m;
  m.p_dark = 1e-5;
  m.afterpulse.amplitude = 0.0;
  GatedDetector d(Detector::D1, m, 0.1, 0.0);
  Rng rng(17);
  const std::uint64_t n = 10'000'000;
  std::uint64_t clicks = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    clicks += d.gate(0, SimTime{static_cast<std::int64_t>(i + 1) * 200'000}, rng).click;
  }
  CHECK(within_sigma(static_cast<double>(clicks), static_cast<double>(n), 1e-5));
}

TEST_CASE("afterpulses decay and history stays bounded") {
  rate::DetectorModel m;
  m.p_dark = 0.0;
  GatedDetector d(Detector::D1, m, 1.0, 0.0);
  Rng rng(1);
  d.gate(1, SimTime{0}, rng);
  const double at_1us = d.afterpulse_probability(from_seconds(1e-6));
  const double at_5us = d.afterpulse_probability(from_seconds(5e-6));
  CHECK(at_1us == doctest::Approx(m.afterpulse.probability_at(1e-6)));
  CHECK(at_5us < at_1us);
  CHECK(d.afterpulse_probability(from_seconds(50e-6)) == 0.0);

  // Heavy clicking: the history never holds more than 10 t_c worth of gates.
  GatedDetector busy(Detector::D2, m, 1.0, 0.0);
  const auto period = from_seconds(2e-7);
  const auto horizon = from_seconds(10.0 * m.afterpulse.time_const_s);
  const std::size_t max_len = static_cast<std::size_t>(horizon / period) + 2;
  for (int i = 1; i <= 20000; ++i) {
    busy.gate(1, period * i, rng);
    CHECK(busy.history_size() <= max_len);
  }
}

TEST_CASE("dead time separates clicks of one detector") {
  rate::DetectorModel m;
  m.p_dark = 1e-3;
  const auto tau = from_seconds(4e-6);
  GatedDetector d(Detector::D1, m, 0.1, 4e-6);
  Rng rng(21);
  Rng photons(22);
  std::poisson_distribution<std::uint32_t> pn(0.5);
  SimTime last_click{-tau.count() - 1};
  SimTime last_dead{std::numeric_limits<std::int64_t>::min()};
  for (int i = 1; i <= 500000; ++i) {
    const SimTime t = SimTime{200'000} * i;
    if (d.gate(pn(photons), t, rng).click) {
      CHECK(t - last_click >= tau);
      last_click = t;
    }
    CHECK(d.dead_until() >= last_dead);
    last_dead = d.dead_until();
  }
}

TEST_CASE("small-signal click probability") {
  rate::DetectorModel m;
  m.p_dark = 1e-5;
  m.afterpulse.amplitude = 0.0;
  const double mu = 0.2;
  const double t = 0.3;
  const double t_b = 0.6;
  const double eta = 0.1;
  const QuantumFrame f{0, 0, 0, 0};  // routes everything to D1 at V = 1
  GatedDetector d(Detector::D1, m, eta, 0.0);
  Rng channel(31);
  Rng det(32);
  const std::uint64_t n = 10'000'000;
  std::uint64_t clicks = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto a = pulse_arrivals(f, mu, OpticalPath{t, t_b, 1.0}, channel);
    clicks += d.gate(a.d1, SimTime{static_cast<std::int64_t>(i + 1) * 200'000}, det).click;
  }
  const double p_signal = 1.0 - std::exp(-mu * t * t_b * eta);
  const double p = p_signal + (1.0 - p_signal) * m.p_dark;
  CHECK(within_sigma(static_cast<double>(clicks), static_cast<double>(n), p));
}

TEST_CASE("identical seeds give identical click streams") {
  auto run = [](std::uint64_t seed) {
    rate::DetectorModel m;
    GatedDetector d(Detector::D2, m, 0.1, 4e-6);
    Rng rng(seed);
    std::vector<std::int64_t> times;
    for (int i = 1; i <= 200000; ++i) {
      const auto a = pulse_arrivals(QuantumFrame{static_cast<PulseIndex>(i), 1, 0, 0}, 0.2,
                                    OpticalPath{0.5, 0.6, 0.99}, rng);
      const SimTime t = SimTime{200'000} * i;
      if (d.gate(a.d2, t, rng).click) times.push_back(t.count());
    }
    return times;
  };
  CHECK(run(4) == run(4));
  CHECK(run(4) != run(5));
}
