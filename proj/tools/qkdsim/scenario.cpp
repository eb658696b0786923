// SPDX-License-Identifier: Apache-2.0
#include "scenario.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "qkdsim/errors.hpp"

namespace qkdsim::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw ValidationError(std::string(key) + ": '" + std::string(v) + "' is not a number");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  // Accept "2e6" style counts as long as they are whole numbers.
  const double d = to_double(key, v);
  if (!(d >= 0.0) || d > 1.8e19 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
    throw ValidationError(std::string(key) + ": '" + std::string(v) + "' is not a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ValidationError(std::string(key) + ": '" + std::string(v) + "' is not a boolean");
}

using Setter = std::function<void(ScenarioConfig&, std::string_view key, std::string_view value)>;

template <typename Field>
Setter number(Field field, double scale = 1.0) {
  return [field, scale](ScenarioConfig& s, std::string_view k, std::string_view v) {
    field(s) = to_double(k, v) * scale;
  };
}

Setter reference(std::optional<double> ReferenceRow::*field) {
  return [field](ScenarioConfig& s, std::string_view k, std::string_view v) {
    const double x = to_double(k, v);
    if (!(x >= 0.0)) throw ValidationError(std::string(k) + " must be >= 0");
    s.reference.*field = x;
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"name", [](ScenarioConfig& s, auto, auto v) { s.name = std::string(v); }},
      {"title", [](ScenarioConfig& s, auto, auto v) { s.title = std::string(v); }},
      {"link.length_km", number([](ScenarioConfig& s) -> double& { return s.run.params.fiber.length_km; })},
      {"link.loss_db_per_km",
       number([](ScenarioConfig& s) -> double& { return s.run.params.fiber.loss_coeff_db_per_km; })},
      {"link.extra_loss_db", number([](ScenarioConfig& s) -> double& { return s.run.params.fiber.extra_loss_db; })},
      {"link.visibility",
       [](ScenarioConfig& s, auto k, auto v) {
         const double vis = to_double(k, v);
         if (!(vis > 0.0 && vis <= 1.0)) throw ValidationError("link.visibility must lie in (0, 1]");
         s.run.params.qber_opt = (1.0 - vis) / 2.0;
       }},
      {"link.qber_stray", number([](ScenarioConfig& s) -> double& { return s.run.params.qber_stray; })},
      {"source.mu", number([](ScenarioConfig& s) -> double& { return s.run.params.mu; })},
      {"protocol.q", number([](ScenarioConfig& s) -> double& { return s.run.params.q; })},
      {"clock.nu_hz", number([](ScenarioConfig& s) -> double& { return s.run.params.nu_hz; })},
      {"bob.transmission", number([](ScenarioConfig& s) -> double& { return s.run.params.t_bob; })},
      {"detector.efficiency", number([](ScenarioConfig& s) -> double& { return s.run.params.eta_bob; })},
      {"detector.p_dark", number([](ScenarioConfig& s) -> double& { return s.run.detector.p_dark; })},
      {"detector.dead_time_us", number([](ScenarioConfig& s) -> double& { return s.run.params.dead_time_s; }, 1e-6)},
      {"detector.gate_width_ns",
       number([](ScenarioConfig& s) -> double& { return s.run.detector.gate_width_s; }, 1e-9)},
      {"detector.afterpulse_amplitude",
       number([](ScenarioConfig& s) -> double& { return s.run.detector.afterpulse.amplitude; })},
      {"detector.afterpulse_time_const_us",
       number([](ScenarioConfig& s) -> double& { return s.run.detector.afterpulse.time_const_s; }, 1e-6)},
      {"storage.length_km", number([](ScenarioConfig& s) -> double& { return s.run.params.storage_len_km; })},
      {"eve.anchors",
       [](ScenarioConfig& s, auto k, auto v) { s.run.eve.i2nu_anchors = sim::parse_anchor_list(k, v); }},
      {"eve.base_info", number([](ScenarioConfig& s) -> double& { return s.run.eve.base_info; })},
      {"eve.calibrated_mu",
       [](ScenarioConfig& s, auto k, auto v) {
         s.run.eve.calibrated_mu = v == "any" ? std::nullopt : std::optional<double>(to_double(k, v));
       }},
      {"run.pulses", [](ScenarioConfig& s, auto k, auto v) { s.run.n_pulses_total = to_u64(k, v); }},
      {"run.seed", [](ScenarioConfig& s, auto k, auto v) { s.run.seed = to_u64(k, v); }},
      {"run.mode",
       [](ScenarioConfig& s, auto k, auto v) {
         if (v == "single-process") {
           s.run.mode = sim::RunMode::SingleProcess;
         } else if (v == "networked") {
           s.run.mode = sim::RunMode::Networked;
         } else {
           throw ValidationError(std::string(k) + ": expected single-process or networked");
         }
       }},
      {"run.sample_fraction", number([](ScenarioConfig& s) -> double& { return s.run.sample_fraction; })},
      {"run.qber_abort", number([](ScenarioConfig& s) -> double& { return s.run.qber_abort_threshold; })},
      {"run.fixed_train", [](ScenarioConfig& s, auto k, auto v) { s.run.fixed_train = to_bool(k, v); }},
      {"run.mu_visibility", number([](ScenarioConfig& s) -> double& { return s.run.mu_visibility; })},
      {"run.calibration_guess_km",
       [](ScenarioConfig& s, auto k, auto v) {
         s.run.calibration_guess_km = v == "auto" ? std::nullopt : std::optional<double>(to_double(k, v));
       }},
      {"reference.visibility", reference(&ReferenceRow::visibility)},
      {"reference.visibility_err", reference(&ReferenceRow::visibility_err)},
      {"reference.r_raw_khz", reference(&ReferenceRow::r_raw_khz)},
      {"reference.qber_pct", reference(&ReferenceRow::qber_pct)},
      {"reference.qber_2sigma_pct", reference(&ReferenceRow::qber_2sigma_pct)},
      {"reference.r_net_khz", reference(&ReferenceRow::r_net_khz)},
  };
  return table;
}

void apply(ScenarioConfig& s, std::string_view key, std::string_view value) {
  const auto it = setters().find(key);
  if (it == setters().end()) {
    throw ValidationError("unknown key '" + std::string(key) + "'");
  }
  it->second(s, key, value);
}

std::pair<std::string_view, std::string_view> split_assignment(std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError("expected key = value, got '" + std::string(line) + "'");
  }
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

}  // namespace

ScenarioConfig parse_scenario(std::string_view text) {
  ScenarioConfig s;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      const auto [key, value] = split_assignment(line);
      if (!seen.insert(std::string(key)).second) {
        throw ValidationError("duplicate key '" + std::string(key) + "'");
      }
      apply(s, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  s.run.validate();
  return s;
}

void apply_overrides(ScenarioConfig& scenario, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto [key, value] = split_assignment(a);
    apply(scenario, key, value);
  }
  scenario.run.validate();
}

ScenarioConfig load_scenario(const std::string& name_or_path) {
  for (const auto& b : bundled_scenarios()) {
    if (b.name == name_or_path) {
      return parse_scenario(b.text);
    }
  }
  std::ifstream in(name_or_path);
  if (!in) {
    std::string names;
    for (const auto& b : bundled_scenarios()) names += " " + std::string(b.name);
    throw ValidationError("no scenario '" + name_or_path + "' (bundled:" + names + ")");
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_scenario(text.str());
}

}  // namespace qkdsim::cli
