// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the qkdsim tool:
//
//   analytic           rate-model report for a scenario (no Monte Carlo)
//   simulate           single-process Monte Carlo exchange
//   calibrate          line-length calibration only
//   visibility         strong-pulse visibility measurement
//   alice / bob        networked endpoints over TCP
//   reproduce-tables   all bundled scenarios to CSV
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qkdsim/netlink/session.hpp"
#include "qkdsim/simengine.hpp"
#include "scenario.hpp"

namespace qkdsim::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitCalibration = 3,
  kExitSecurity = 4,
};

int exit_code_for(sim::ExchangeStatus status);
int exit_code_for(net::AbortKind kind);

/// args excludes the program name. Never throws.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ReproduceOptions {
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> pulses;  // overrides each scenario's run.pulses
  unsigned jobs = 1;
};

struct ReproduceOutput {
  std::string report_csv;
  std::string checks_csv;
  bool all_pass = true;
};

/// Seed of one scenario's run, derived from the base seed and its name.
std::uint64_t scenario_seed(std::uint64_t base_seed, std::string_view name);

/// Runs every bundled scenario; throws CalibrationError / ValidationError.
ReproduceOutput reproduce_tables(const ReproduceOptions& options);

/// Sifted-key dump shared by simulate, alice and bob: estimate counts, then
/// "index,bit" lines.
std::string format_key_file(const std::vector<std::uint64_t>& indices, const std::vector<std::uint8_t>& bits,
                            const protocol::QberEstimate& estimate);

}  // namespace qkdsim::cli
