// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qkdsim/errors.hpp"

namespace qkdsim::protocol {

void SiftedKey::append(const SiftedKey& other) {
  indices.insert(indices.end(), other.indices.begin(), other.indices.end());
  alice_bits.insert(alice_bits.end(), other.alice_bits.begin(), other.alice_bits.end());
  bob_bits.insert(bob_bits.end(), other.bob_bits.begin(), other.bob_bits.end());
}

void SiftedKey::validate() const {
  if (alice_bits.size() != indices.size() || bob_bits.size() != indices.size()) {
    throw ValidationError("sifted key arrays differ in length");
  }
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] <= indices[i - 1]) {
      throw ValidationError("sifted key indices must be strictly increasing");
    }
  }
}

void draw_alice_settings(std::span<QuantumFrame> frames, Rng& alice_rng) {
  for (auto& f : frames) {
    f.alice_bit = random_bit(alice_rng);
    f.alice_basis = random_bit(alice_rng);
  }
}

void draw_bob_bases(std::span<QuantumFrame> frames, Rng& bob_rng) {
  for (auto& f : frames) {
    f.bob_basis = random_bit(bob_rng);
  }
}

std::vector<QuantumFrame> assign_settings(std::size_t n_pulses, Rng& alice_rng, Rng& bob_rng,
                                          PulseIndex first_index) {
  if (n_pulses == 0) {
    throw ValidationError("at least one pulse is required");
  }
  std::vector<QuantumFrame> frames(n_pulses);
  for (std::size_t i = 0; i < n_pulses; ++i) {
    frames[i].pulse_index = first_index + i;
  }
  draw_alice_settings(frames, alice_rng);
  draw_bob_bases(frames, bob_rng);
  return frames;
}

std::vector<SingleClick> single_clicks(std::span<const ClickRecord> clicks) {
  std::vector<ClickRecord> sorted(clicks.begin(), clicks.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ClickRecord& a, const ClickRecord& b) {
    if (a.pulse_index != b.pulse_index) return a.pulse_index < b.pulse_index;
    return a.detector < b.detector;
  });

  std::vector<SingleClick> out;
  out.reserve(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j].pulse_index == sorted[i].pulse_index) {
      if (sorted[j].detector == sorted[j - 1].detector) {
        throw ValidationError("duplicate click record for pulse " + std::to_string(sorted[j].pulse_index));
      }
      ++j;
    }
    if (j - i == 1) {
      out.push_back({sorted[i].pulse_index, sorted[i].detector});
    }
    i = j;
  }
  return out;
}

namespace {

const QuantumFrame& frame_for(std::span<const QuantumFrame> frames, PulseIndex index) {
  auto it = std::lower_bound(frames.begin(), frames.end(), index,
                             [](const QuantumFrame& f, PulseIndex i) { return f.pulse_index < i; });
  if (it == frames.end() || it->pulse_index != index) {
    throw ValidationError("click references unknown pulse " + std::to_string(index));
  }
  return *it;
}

}  // namespace

SiftedKey sift(std::span<const QuantumFrame> frames, std::span<const ClickRecord> clicks) {
  SiftedKey key;
  for (const auto& click : single_clicks(clicks)) {
    const auto& frame = frame_for(frames, click.pulse_index);
    if (!frame.compatible()) {
      continue;
    }
    key.indices.push_back(click.pulse_index);
    key.alice_bits.push_back(frame.alice_bit);
    key.bob_bits.push_back(bit_for(click.detector));
  }
  return key;
}

std::vector<std::uint8_t> compatible_mask(std::span<const QuantumFrame> alice_frames,
                                          std::span<const PulseIndex> reported,
                                          std::span<const std::uint8_t> bob_bases) {
  if (reported.size() != bob_bases.size()) {
    throw ValidationError("basis reveal does not match the click report");
  }
  std::vector<std::uint8_t> mask(reported.size());
  for (std::size_t i = 0; i < reported.size(); ++i) {
    mask[i] = frame_for(alice_frames, reported[i]).alice_basis == bob_bases[i] ? 1 : 0;
  }
  return mask;
}

std::vector<std::size_t> choose_sample(std::size_t key_size, double sample_fraction, Rng& rng) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ValidationError("sample fraction must lie in (0, 1]");
  }
  if (key_size == 0) {
    throw ValidationError("cannot sample an empty key");
  }
  const auto wanted = static_cast<std::size_t>(std::ceil(sample_fraction * static_cast<double>(key_size)));
  const std::size_t m = std::clamp<std::size_t>(wanted, 1, key_size);

  // Partial Fisher-Yates over positions.
  std::vector<std::size_t> positions(key_size);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t span = key_size - i;
    const std::size_t j = i + static_cast<std::size_t>(rng() % span);
    std::swap(positions[i], positions[j]);
  }
  positions.resize(m);
  std::sort(positions.begin(), positions.end());
  return positions;
}

QberEstimate qber_from_counts(std::size_t errors, std::size_t sample_size) {
  if (sample_size == 0 || errors > sample_size) {
    throw ValidationError("invalid error sample");
  }
  QberEstimate est;
  est.sample_size = sample_size;
  est.errors = errors;
  est.d_hat = static_cast<double>(errors) / static_cast<double>(sample_size);
  est.ci_2sigma = 2.0 * std::sqrt(est.d_hat * (1.0 - est.d_hat) / static_cast<double>(sample_size));
  est.exceeds_half = est.d_hat > 0.5;
  return est;
}

QberEstimate estimate_qber(const SiftedKey& key, double sample_fraction, Rng& rng) {
  key.validate();
  if (key.empty()) {
    throw ValidationError("cannot estimate QBER of an empty key");
  }
  const auto sample = choose_sample(key.size(), sample_fraction, rng);

  std::size_t errors = 0;
  std::vector<std::uint8_t> disclosed(key.size(), 0);
  for (std::size_t pos : sample) {
    errors += key.alice_bits[pos] != key.bob_bits[pos] ? 1 : 0;
    disclosed[pos] = 1;
  }

  QberEstimate est = qber_from_counts(errors, sample.size());
  est.disclosed_indices.reserve(sample.size());
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (disclosed[i]) {
      est.disclosed_indices.push_back(key.indices[i]);
    } else {
      est.remaining.indices.push_back(key.indices[i]);
      est.remaining.alice_bits.push_back(key.alice_bits[i]);
      est.remaining.bob_bits.push_back(key.bob_bits[i]);
    }
  }
  return est;
}

SecurityReport security_check(std::span<const ClickRecord> clicks, std::uint64_t n_gates,
                              double expected_coincidence_per_gate, std::span<const double> power_samples,
                              const PowerBounds& bounds) {
  SecurityReport report;
  report.power_bounds = bounds;

  std::vector<PulseIndex> coincident;
  for (const auto& c : clicks) {
    if (c.coincidence) {
      coincident.push_back(c.pulse_index);
    }
  }
  std::sort(coincident.begin(), coincident.end());
  report.coincidence_count =
      static_cast<std::size_t>(std::unique(coincident.begin(), coincident.end()) - coincident.begin());
  report.coincidence_expected = expected_coincidence_per_gate * static_cast<double>(n_gates);
  report.coincidence_sigma = std::sqrt(report.coincidence_expected);

  double sum = 0.0;
  for (double p : power_samples) {
    sum += p;
    if (!(p >= bounds.lo && p <= bounds.hi)) {
      ++report.power_violations;
    }
  }
  if (!power_samples.empty()) {
    report.mean_incoming_power = sum / static_cast<double>(power_samples.size());
  }

  const double threshold = report.coincidence_expected + kCoincidenceAlarmSigma * report.coincidence_sigma;
  if (static_cast<double>(report.coincidence_count) > threshold) {
    report.verdict = Verdict::Alert;
    report.reason = "coincidence count " + std::to_string(report.coincidence_count) + " exceeds expectation " +
                    std::to_string(report.coincidence_expected) + " + 5 sigma";
  } else if (report.power_violations > 0) {
    report.verdict = Verdict::Alert;
    report.reason = std::to_string(report.power_violations) + " incoming-power sample(s) outside calibrated bounds";
  }
  return report;
}

}  // namespace qkdsim::protocol
