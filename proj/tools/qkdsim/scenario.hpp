// SPDX-License-Identifier: Apache-2.0
//
// Scenario configs: flat "key = value" documents, '#' starts a comment.
//
//   link.length_km  link.loss_db_per_km  link.extra_loss_db  link.visibility
//   link.qber_stray source.mu  protocol.q  clock.nu_hz  bob.transmission
//   detector.efficiency  detector.p_dark  detector.dead_time_us
//   detector.gate_width_ns  detector.afterpulse_amplitude
//   detector.afterpulse_time_const_us  storage.length_km
//   eve.anchors  eve.base_info  eve.calibrated_mu
//   run.pulses  run.seed  run.mode  run.sample_fraction  run.qber_abort
//   run.fixed_train  run.mu_visibility  run.calibration_guess_km
//   reference.visibility  reference.visibility_err  reference.r_raw_khz
//   reference.qber_pct  reference.qber_2sigma_pct  reference.r_net_khz
//   name  title
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qkdsim/simengine.hpp"

namespace qkdsim::cli {

/// Values reported for a field exchange, when the scenario reproduces one.
struct ReferenceRow {
  std::optional<double> visibility;
  std::optional<double> visibility_err;
  std::optional<double> r_raw_khz;
  std::optional<double> qber_pct;
  std::optional<double> qber_2sigma_pct;
  std::optional<double> r_net_khz;

  [[nodiscard]] bool has_rates() const { return r_raw_khz && qber_pct && r_net_khz; }
};

struct ScenarioConfig {
  std::string name = "custom";
  std::string title;
  sim::RunConfig run;
  ReferenceRow reference;
};

/// Parses and validates a scenario document. Unknown keys, duplicate keys and
/// out-of-range values throw ValidationError naming the line.
ScenarioConfig parse_scenario(std::string_view text);

/// Applies "key=value" overrides on top of an existing scenario.
void apply_overrides(ScenarioConfig& scenario, const std::vector<std::string>& assignments);

struct BundledScenario {
  std::string_view name;
  std::string_view text;
};

/// Scenario files shipped with the tool, in table order.
const std::vector<BundledScenario>& bundled_scenarios();

/// A bundled name, or else a path to a scenario file.
ScenarioConfig load_scenario(const std::string& name_or_path);

}  // namespace qkdsim::cli
