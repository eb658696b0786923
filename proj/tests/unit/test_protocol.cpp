// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "oracles/oracles.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/protocol.hpp"

using namespace qkdsim;
using namespace qkdsim::protocol;
using photonics::ClickRecord;

namespace {

ClickRecord click(PulseIndex i, Detector d, bool coincidence = false) {
  ClickRecord c;
  c.pulse_index = i;
  c.detector = d;
  c.coincidence = coincidence;
  return c;
}

SiftedKey planted_key(std::size_t n, double error_rate, Rng& rng) {
  SiftedKey k;
  for (std::size_t i = 0; i < n; ++i) {
    const auto bit = random_bit(rng);
    k.indices.push_back(3 * i + 1);
    k.alice_bits.push_back(bit);
    k.bob_bits.push_back(bernoulli(rng, error_rate) ? 1 - bit : bit);
  }
  return k;
}

}  // namespace

TEST_CASE("bit for detector convention") {
  CHECK(bit_for(Detector::D1) == 0);
  CHECK(bit_for(Detector::D2) == 1);
}

TEST_CASE("setting assignment") {
  Rng a1(1), b1(2), a2(1), b2(2);
  const auto f1 = assign_settings(4, a1, b1);
  const auto f2 = assign_settings(4, a2, b2);
  REQUIRE(f1.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(f1[i].pulse_index == i);
    CHECK(f1[i].alice_bit == f2[i].alice_bit);
    CHECK(f1[i].alice_basis == f2[i].alice_basis);
    CHECK(f1[i].bob_basis == f2[i].bob_basis);
  }
  CHECK_THROWS_AS(assign_settings(0, a1, b1), ValidationError);

  // Eight (bit, basisA, basisB) combinations, each 1/8 within 3 sigma.
  Rng a(77), b(78);
  const std::size_t n = 1'000'000;
  const auto frames = assign_settings(n, a, b, 1000);
  CHECK(frames.front().pulse_index == 1000);
  std::array<std::size_t, 8> counts{};
  for (const auto& f : frames) {
    ++counts[f.alice_bit * 4 + f.alice_basis * 2 + f.bob_basis];
  }
  const double sigma = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (auto c : counts) {
    CHECK(std::abs(static_cast<double>(c) - n / 8.0) <= 3.0 * sigma);
  }
}

TEST_CASE("sift by definition") {
  std::vector<QuantumFrame> frames = {
      {0, 1, 0, 0},
      {1, 0, 1, 0},
      {2, 1, 0, 0},
      {3, 0, 1, 1},
  };
  const std::vector<ClickRecord> clicks = {click(0, Detector::D2), click(1, Detector::D1), click(3, Detector::D1)};
  const auto key = sift(frames, clicks);
  CHECK(key.indices == std::vector<PulseIndex>{0, 3});
  CHECK(key.alice_bits == std::vector<std::uint8_t>{1, 0});
  CHECK(key.bob_bits == std::vector<std::uint8_t>{1, 0});
  CHECK_NOTHROW(key.validate());

  const std::vector<ClickRecord> coincident = {click(0, Detector::D1, true), click(0, Detector::D2, true),
                                               click(3, Detector::D2)};
  CHECK(sift(frames, coincident).indices == std::vector<PulseIndex>{3});

  const std::vector<ClickRecord> dup = {click(0, Detector::D1), click(0, Detector::D1)};
  CHECK_THROWS_AS(sift(frames, dup), ValidationError);
  const std::vector<ClickRecord> stray = {click(9, Detector::D1)};
  CHECK_THROWS_AS(sift(frames, stray), ValidationError);
}

TEST_CASE("sift agrees with the brute-force reference on random instances") {
  Rng rng(99);
  for (int trial = 0; trial < 20000; ++trial) {
    const std::size_t n = 1 + rng() % 16;
    std::vector<QuantumFrame> frames(n);
    for (std::size_t i = 0; i < n; ++i) {
      frames[i] = {i, random_bit(rng), random_bit(rng), random_bit(rng)};
    }
    std::vector<ClickRecord> clicks;
    for (std::size_t i = 0; i < n; ++i) {
      for (auto d : {Detector::D1, Detector::D2}) {
        if (bernoulli(rng, 0.4)) clicks.push_back(click(i, d));
      }
    }
    std::shuffle(clicks.begin(), clicks.end(), rng);
    if (bernoulli(rng, 0.05) && !clicks.empty()) clicks.push_back(clicks.front());

    const auto want = oracle::sift(frames, clicks);
    if (!want) {
      CHECK_THROWS_AS(sift(frames, clicks), ValidationError);
    } else {
      CHECK(sift(frames, clicks) == *want);
    }
  }
}

TEST_CASE("sifting is symmetric across the two transcripts") {
  Rng a(5), b(6), c(7);
  const auto frames = assign_settings(20000, a, b);
  std::vector<ClickRecord> clicks;
  for (const auto& f : frames) {
    if (bernoulli(c, 0.1)) clicks.push_back(click(f.pulse_index, bernoulli(c, 0.5) ? Detector::D1 : Detector::D2));
  }
  const auto singles = single_clicks(clicks);
  std::vector<PulseIndex> reported;
  std::vector<std::uint8_t> bob_bases;
  for (const auto& s : singles) {
    reported.push_back(s.pulse_index);
    bob_bases.push_back(frames[s.pulse_index].bob_basis);
  }
  // Alice only sees the reported indices and Bob's bases.
  const auto mask = compatible_mask(frames, reported, bob_bases);
  std::vector<PulseIndex> alice_side;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) alice_side.push_back(reported[i]);
  }
  CHECK(alice_side == sift(frames, clicks).indices);
  CHECK_THROWS_AS(compatible_mask(frames, reported, std::vector<std::uint8_t>{}), ValidationError);
}

TEST_CASE("kept fraction of single clicks is one half") {
  Rng a(41), b(42), c(43);
  const std::size_t n = 1'000'000;
  const auto frames = assign_settings(n, a, b);
  std::vector<ClickRecord> clicks;
  for (const auto& f : frames) {
    if (bernoulli(c, 0.05)) clicks.push_back(click(f.pulse_index, Detector::D1));
  }
  const double kept = static_cast<double>(sift(frames, clicks).size());
  const double m = static_cast<double>(clicks.size());
  CHECK(std::abs(kept - 0.5 * m) <= 3.0 * std::sqrt(m * 0.25));
}

TEST_CASE("sample choice") {
  Rng rng(1);
  const auto s = choose_sample(100, 0.1, rng);
  CHECK(s.size() == 10);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 10);
  CHECK(choose_sample(3, 0.01, rng).size() == 1);
  CHECK(choose_sample(7, 1.0, rng).size() == 7);
  CHECK_THROWS_AS(choose_sample(0, 0.1, rng), ValidationError);
  CHECK_THROWS_AS(choose_sample(10, 0.0, rng), ValidationError);
  CHECK_THROWS_AS(choose_sample(10, 1.5, rng), ValidationError);
}

TEST_CASE("error estimation") {
  Rng rng(3);
  SiftedKey same = planted_key(1000, 0.0, rng);
  auto est = estimate_qber(same, 0.1, rng);
  CHECK(est.d_hat == 0.0);
  CHECK(est.ci_2sigma == 0.0);
  CHECK(est.sample_size == 100);
  CHECK(est.remaining.size() == 900);

  SiftedKey inverted = same;
  for (auto& b : inverted.bob_bits) b ^= 1;
  est = estimate_qber(inverted, 0.1, rng);
  CHECK(est.d_hat == 1.0);
  CHECK(est.exceeds_half);

  // Disclosed positions never survive into the key.
  SiftedKey k = planted_key(5000, 0.03, rng);
  est = estimate_qber(k, 0.1, rng);
  std::set<PulseIndex> disclosed(est.disclosed_indices.begin(), est.disclosed_indices.end());
  for (auto i : est.remaining.indices) CHECK(disclosed.count(i) == 0);
  CHECK(est.remaining.size() + est.disclosed_indices.size() == k.size());
  CHECK_NOTHROW(est.remaining.validate());

  CHECK_THROWS_AS(estimate_qber(SiftedKey{}, 0.1, rng), ValidationError);
  CHECK_THROWS_AS(qber_from_counts(3, 2), ValidationError);
}

TEST_CASE("planted error rate is recovered within 2 sigma") {
  // sigma of the estimator at the planted rate
  int covered = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    Rng rng(10'000 + t);
    const auto key = planted_key(20000, 0.05, rng);
    const auto est = estimate_qber(key, 0.1, rng);
    const double sigma = std::sqrt(0.05 * 0.95 / static_cast<double>(est.sample_size));
    covered += std::abs(est.d_hat - 0.05) <= 2.0 * sigma ? 1 : 0;
  }
  CHECK(covered >= 950);
}

TEST_CASE("sifted key invariants") {
  SiftedKey k;
  k.indices = {1, 2};
  k.alice_bits = {0};
  k.bob_bits = {0, 1};
  CHECK_THROWS_AS(k.validate(), ValidationError);
  k.alice_bits = {0, 1};
  k.indices = {2, 2};
  CHECK_THROWS_AS(k.validate(), ValidationError);
}

TEST_CASE("security monitors") {
  const PowerBounds bounds{0.9, 1.1};
  const std::vector<double> honest(50, 1.0);
  std::vector<ClickRecord> clicks;
  for (PulseIndex i = 0; i < 10; ++i) {
    clicks.push_back(click(i * 7, Detector::D1, true));
    clicks.push_back(click(i * 7, Detector::D2, true));
  }
  auto r = security_check(clicks, 10'000'000, 1e-6, honest, bounds);
  CHECK(r.coincidence_count == 10);
  CHECK(r.coincidence_expected == doctest::Approx(10.0));
  CHECK(r.verdict == Verdict::Ok);

  std::vector<double> trojan = honest;
  trojan[17] = 2.0 * bounds.hi;
  r = security_check(clicks, 10'000'000, 1e-6, trojan, bounds);
  CHECK(r.verdict == Verdict::Alert);
  CHECK(r.power_violations == 1);

  // Ten times the honest coincidence count.
  std::vector<ClickRecord> inflated;
  for (PulseIndex i = 0; i < 100; ++i) {
    inflated.push_back(click(i, Detector::D1, true));
    inflated.push_back(click(i, Detector::D2, true));
  }
  r = security_check(inflated, 10'000'000, 1e-6, honest, bounds);
  CHECK(r.verdict == Verdict::Alert);
  CHECK(r.coincidence_count == 100);
}
