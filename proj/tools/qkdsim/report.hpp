// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "qkdsim/rate_model.hpp"

namespace qkdsim::cli {

enum class RowSource { Measured, Predicted, Paper };

const char* to_string(RowSource source);

struct ReportRow {
  std::string scenario;
  double length_km = 0.0;
  double loss_db = 0.0;
  double r_raw_khz = 0.0;
  double qber_pct = 0.0;
  double qber_2sigma = 0.0;  // percentage points
  double r_net_khz = 0.0;
  RowSource source = RowSource::Predicted;

  /// Throws ValidationError on negative or non-finite fields, or a scenario
  /// name that would break the CSV.
  void validate() const;
};

inline constexpr std::string_view kReportHeader =
    "scenario,length_km,loss_db,r_raw_khz,qber_pct,qber_2sigma,r_net_khz,source\n";

/// Header plus one line per row, fixed precision, '\n' line ends.
std::string emit_report(const std::vector<ReportRow>& rows);

/// Outcome of one tolerance check of reproduce-tables.
struct CheckRow {
  std::string scenario;
  std::string quantity;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;  // relative
  bool pass = false;
  bool informational = false;  // reported, not judged
};

inline constexpr std::string_view kChecksHeader = "scenario,quantity,value,reference,rel_tolerance,rel_error,result\n";

std::string emit_checks(const std::vector<CheckRow>& checks);

/// "name = value" lines, one per RateReport field.
std::string format_rate_report(const rate::RateReport& r);

/// Fixed-point text with the given number of decimals, '.' separator.
std::string fixed(double value, int decimals);

}  // namespace qkdsim::cli
