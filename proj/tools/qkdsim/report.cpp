// SPDX-License-Identifier: Apache-2.0
#include "report.hpp"

#include <charconv>
#include <cmath>

#include "qkdsim/errors.hpp"

namespace qkdsim::cli {

const char* to_string(RowSource source) {
  switch (source) {
    case RowSource::Measured: return "measured";
    case RowSource::Predicted: return "predicted";
    case RowSource::Paper: return "paper";
  }
  return "?";
}

void ReportRow::validate() const {
  if (scenario.empty() || scenario.find_first_of(",\"\n\r") != std::string::npos) {
    throw ValidationError("scenario name '" + scenario + "' is not CSV-safe");
  }
  for (double v : {length_km, loss_db, r_raw_khz, qber_pct, qber_2sigma, r_net_khz}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError("report row '" + scenario + "' has a negative or non-finite field");
    }
  }
}

std::string fixed(double value, int decimals) {
  // Avoid "-0.000".
  if (value == 0.0) value = 0.0;
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, decimals);
  if (ec != std::errc{}) {
    return "nan";
  }
  return std::string(buf, end);
}

std::string emit_report(const std::vector<ReportRow>& rows) {
  std::string out(kReportHeader);
  for (const auto& r : rows) {
    r.validate();
    out += r.scenario;
    out += ',' + fixed(r.length_km, 1);
    out += ',' + fixed(r.loss_db, 1);
    out += ',' + fixed(r.r_raw_khz, 4);
    out += ',' + fixed(r.qber_pct, 2);
    out += ',' + fixed(r.qber_2sigma, 2);
    out += ',' + fixed(r.r_net_khz, 5);
    out += ',';
    out += to_string(r.source);
    out += '\n';
  }
  return out;
}

std::string emit_checks(const std::vector<CheckRow>& checks) {
  std::string out(kChecksHeader);
  for (const auto& c : checks) {
    const double rel = c.reference != 0.0 ? (c.value - c.reference) / c.reference : 0.0;
    out += c.scenario + ',' + c.quantity + ',' + fixed(c.value, 6) + ',' + fixed(c.reference, 6) + ',' +
           fixed(c.tolerance, 3) + ',' + fixed(rel, 4) + ',' + (c.informational ? "info" : c.pass ? "pass" : "fail") + '\n';
  }
  return out;
}

std::string format_rate_report(const rate::RateReport& r) {
  std::string out;
  auto line = [&](const char* name, double v, int decimals) {
    out += name;
    out += " = ";
    out += fixed(v, decimals);
    out += '\n';
  };
  line("transmission", r.transmission, 6);
  line("p_det", r.p_det, 8);
  line("p_click", r.p_click, 8);
  line("p_coincidence", r.p_coincidence, 10);
  line("prefactor_khz", r.prefactor_hz / 1e3, 3);
  line("eta_duty", r.eta_duty, 6);
  line("eta_tau", r.eta_tau, 6);
  line("r_raw_khz", r.r_raw_hz / 1e3, 5);
  line("visibility", r.visibility, 5);
  line("qber_opt_pct", 100.0 * r.qber_opt, 3);
  line("qber_dark_pct", 100.0 * r.qber_dark, 3);
  line("qber_after_pct", 100.0 * r.qber_after, 3);
  line("qber_stray_pct", 100.0 * r.qber_stray, 3);
  line("qber_pct", 100.0 * r.qber_total, 3);
  out += std::string("qber_clamped = ") + (r.qber_clamped ? "true" : "false") + '\n';
  line("i_ab", r.i_ab, 5);
  line("i_ab_corrected", r.i_ab_corrected, 5);
  line("i_ae", r.i_ae, 5);
  line("eta_dist", r.eta_dist, 5);
  line("r_net_khz", r.r_net_hz / 1e3, 5);
  return out;
}

}  // namespace qkdsim::cli
