// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "qkdsim/errors.hpp"
#include "qkdsim/simengine.hpp"

namespace qkdsim::sim {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ValidationError("bad number for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ValidationError("bad integer for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

std::string format_anchors(const rate::EveModel& eve) {
  std::string out;
  for (const auto& [loss, info] : eve.i2nu_anchors) {
    if (!out.empty()) out += ',';
    out += format_double(loss) + ':' + format_double(info);
  }
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> parse_anchor_list(std::string_view key, std::string_view text) {
  std::vector<std::pair<double, double>> anchors;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = text.substr(0, comma);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw ValidationError("anchor '" + std::string(item) + "' in " + std::string(key) + " is not loss:info");
    }
    anchors.emplace_back(parse_double(key, item.substr(0, colon)), parse_double(key, item.substr(colon + 1)));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
  }
  return anchors;
}

std::string serialize_run_config(const RunConfig& c) {
  const auto& p = c.params;
  std::ostringstream out;
  auto kv = [&](const char* k, const std::string& v) { out << k << '=' << v << '\n'; };
  auto kd = [&](const char* k, double v) { kv(k, format_double(v)); };
  kd("params.q", p.q);
  kd("params.nu_hz", p.nu_hz);
  kd("params.mu", p.mu);
  kd("params.t_bob", p.t_bob);
  kd("params.eta_bob", p.eta_bob);
  kd("params.storage_len_km", p.storage_len_km);
  kd("params.dead_time_s", p.dead_time_s);
  kd("params.qber_opt", p.qber_opt);
  kd("params.qber_stray", p.qber_stray);
  kd("fiber.length_km", p.fiber.length_km);
  kd("fiber.loss_coeff_db_per_km", p.fiber.loss_coeff_db_per_km);
  kd("fiber.extra_loss_db", p.fiber.extra_loss_db);
  kd("fiber.thermal_expansion_alpha", p.fiber.thermal_expansion_alpha);
  kd("fiber.group_velocity_m_per_s", p.fiber.group_velocity_m_per_s);
  kd("detector.p_dark", c.detector.p_dark);
  kd("detector.gate_width_s", c.detector.gate_width_s);
  kd("detector.afterpulse_amplitude", c.detector.afterpulse.amplitude);
  kd("detector.afterpulse_time_const_s", c.detector.afterpulse.time_const_s);
  kd("eve.base_info", c.eve.base_info);
  kv("eve.anchors", format_anchors(c.eve));
  kv("eve.calibrated_mu", c.eve.calibrated_mu ? format_double(*c.eve.calibrated_mu) : "any");
  kv("run.pulses", std::to_string(c.n_pulses_total));
  kv("run.seed", std::to_string(c.seed));
  kd("run.sample_fraction", c.sample_fraction);
  kv("run.mode", c.mode == RunMode::Networked ? "networked" : "single-process");
  kv("run.fixed_train", c.fixed_train ? "1" : "0");
  kd("run.qber_abort", c.qber_abort_threshold);
  kd("run.mu_visibility", c.mu_visibility);
  kv("run.calibration_guess_km", c.calibration_guess_km ? format_double(*c.calibration_guess_km) : "auto");
  kd("power.nominal_output", c.power.nominal_output);
  kd("power.noise_rel", c.power.noise_rel);
  kd("power.tolerance_rel", c.power.tolerance_rel);
  kd("power.trojan_extra", c.power.trojan_extra);
  return out.str();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  auto& p = c.params;
  using Setter = std::function<void(std::string_view, std::string_view)>;
  auto d = [](double& field) -> Setter {
    return [&field](std::string_view k, std::string_view v) { field = parse_double(k, v); };
  };
  const std::map<std::string, Setter, std::less<>> setters = {
      {"params.q", d(p.q)},
      {"params.nu_hz", d(p.nu_hz)},
      {"params.mu", d(p.mu)},
      {"params.t_bob", d(p.t_bob)},
      {"params.eta_bob", d(p.eta_bob)},
      {"params.storage_len_km", d(p.storage_len_km)},
      {"params.dead_time_s", d(p.dead_time_s)},
      {"params.qber_opt", d(p.qber_opt)},
      {"params.qber_stray", d(p.qber_stray)},
      {"fiber.length_km", d(p.fiber.length_km)},
      {"fiber.loss_coeff_db_per_km", d(p.fiber.loss_coeff_db_per_km)},
      {"fiber.extra_loss_db", d(p.fiber.extra_loss_db)},
      {"fiber.thermal_expansion_alpha", d(p.fiber.thermal_expansion_alpha)},
      {"fiber.group_velocity_m_per_s", d(p.fiber.group_velocity_m_per_s)},
      {"detector.p_dark", d(c.detector.p_dark)},
      {"detector.gate_width_s", d(c.detector.gate_width_s)},
      {"detector.afterpulse_amplitude", d(c.detector.afterpulse.amplitude)},
      {"detector.afterpulse_time_const_s", d(c.detector.afterpulse.time_const_s)},
      {"eve.base_info", d(c.eve.base_info)},
      {"eve.anchors", [&](auto k, auto v) { c.eve.i2nu_anchors = parse_anchor_list(k, v); }},
      {"eve.calibrated_mu",
       [&](auto k, auto v) {
         c.eve.calibrated_mu = v == "any" ? std::nullopt : std::optional<double>(parse_double(k, v));
       }},
      {"run.pulses", [&](auto k, auto v) { c.n_pulses_total = parse_u64(k, v); }},
      {"run.seed", [&](auto k, auto v) { c.seed = parse_u64(k, v); }},
      {"run.sample_fraction", d(c.sample_fraction)},
      {"run.mode",
       [&](auto k, auto v) {
         if (v == "networked") {
           c.mode = RunMode::Networked;
         } else if (v == "single-process") {
           c.mode = RunMode::SingleProcess;
         } else {
           throw ValidationError("bad value for " + std::string(k) + ": '" + std::string(v) + "'");
         }
       }},
      {"run.fixed_train", [&](auto k, auto v) { c.fixed_train = parse_u64(k, v) != 0; }},
      {"run.qber_abort", d(c.qber_abort_threshold)},
      {"run.mu_visibility", d(c.mu_visibility)},
      {"run.calibration_guess_km",
       [&](auto k, auto v) {
         c.calibration_guess_km = v == "auto" ? std::nullopt : std::optional<double>(parse_double(k, v));
       }},
      {"power.nominal_output", d(c.power.nominal_output)},
      {"power.noise_rel", d(c.power.noise_rel)},
      {"power.tolerance_rel", d(c.power.tolerance_rel)},
      {"power.trojan_extra", d(c.power.trojan_extra)},
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("malformed run-config line '" + std::string(line) + "'");
    }
    const auto key = line.substr(0, eq);
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ValidationError("unknown run-config key '" + std::string(key) + "'");
    }
    it->second(key, line.substr(eq + 1));
  }
  c.validate();
  return c;
}

}  // namespace qkdsim::sim
