// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "qkdsim/errors.hpp"
#include "qkdsim/netlink/transport.hpp"
#include "report.hpp"

namespace qkdsim::cli {
namespace {

using nlohmann::json;

struct CommonOptions {
  std::string config = "geneva_nyon_lake";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> pulses;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

void add_scenario_options(CLI::App* cmd, CommonOptions& o, bool with_run = true) {
  cmd->add_option("-c,--config", o.config, "Bundled scenario name or path to a scenario file")
      ->capture_default_str();
  cmd->add_option("--set", o.sets, "Override a scenario key (key=value), repeatable");
  if (with_run) {
    cmd->add_option("--pulses", o.pulses, "Number of pulses to send");
    cmd->add_option("--seed", o.seed, "Base RNG seed");
  }
}

ScenarioConfig load(const CommonOptions& o) {
  ScenarioConfig sc = load_scenario(o.config);
  std::vector<std::string> sets = o.sets;
  if (o.pulses) sets.push_back("run.pulses=" + std::to_string(*o.pulses));
  if (o.seed) sets.push_back("run.seed=" + std::to_string(*o.seed));
  apply_overrides(sc, sets);
  return sc;
}

json report_json(const rate::RateReport& r) {
  return json{{"transmission", r.transmission},
              {"p_det", r.p_det},
              {"p_click", r.p_click},
              {"p_coincidence", r.p_coincidence},
              {"prefactor_hz", r.prefactor_hz},
              {"eta_duty", r.eta_duty},
              {"eta_tau", r.eta_tau},
              {"r_raw_hz", r.r_raw_hz},
              {"visibility", r.visibility},
              {"qber_opt", r.qber_opt},
              {"qber_dark", r.qber_dark},
              {"qber_after", r.qber_after},
              {"qber_stray", r.qber_stray},
              {"qber_total", r.qber_total},
              {"qber_clamped", r.qber_clamped},
              {"i_ab", r.i_ab},
              {"i_ab_corrected", r.i_ab_corrected},
              {"i_ae", r.i_ae},
              {"eta_dist", r.eta_dist},
              {"r_net_hz", r.r_net_hz}};
}

/// Net rate recomputed from a reference row's own raw rate and error rate.
double reference_net_khz(const ScenarioConfig& sc) {
  const auto& p = sc.run.params;
  const double i_ae = std::min(rate::eve_info(p.fiber.total_loss_db(), p.mu, sc.run.eve), 1.0);
  return rate::net_rate(*sc.reference.r_raw_khz * 1e3, *sc.reference.qber_pct / 100.0, i_ae) / 1e3;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  f << content;
  if (!f) {
    throw std::runtime_error("write to " + path + " failed");
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

int cmd_analytic(const CommonOptions& o, std::ostream& out) {
  const auto sc = load(o);
  const auto schedule = sim::schedule_for_run(sc.run, sim::SimTime{0});
  const auto r = sim::predict_for_run(sc.run, schedule);
  if (o.json) {
    json j{{"scenario", sc.name}, {"train_size", schedule.train_size}, {"report", report_json(r)}};
    if (sc.reference.has_rates()) {
      j["r_net_from_reference_khz"] = reference_net_khz(sc);
      j["reference_r_net_khz"] = *sc.reference.r_net_khz;
    }
    out << j.dump(2) << '\n';
    return kExitOk;
  }
  out << "scenario = " << sc.name << '\n';
  out << "loss_db = " << fixed(sc.run.params.fiber.total_loss_db(), 2) << '\n';
  out << "train_size = " << schedule.train_size << '\n';
  out << format_rate_report(r);
  if (sc.reference.has_rates()) {
    out << "r_net_from_reference_khz = " << fixed(reference_net_khz(sc), 5) << '\n';
    out << "reference_r_net_khz = " << fixed(*sc.reference.r_net_khz, 5) << '\n';
  }
  return kExitOk;
}

std::string format_key_file_from(const protocol::SiftedKey& key, bool bob, const protocol::QberEstimate& est) {
  return format_key_file(key.indices, bob ? key.bob_bits : key.alice_bits, est);
}

int cmd_simulate(const CommonOptions& o, const std::string& key_out, const std::string& bob_key_out, bool events,
                 std::ostream& out, std::ostream& err) {
  auto sc = load(o);
  sc.run.mode = sim::RunMode::SingleProcess;
  const auto result = sim::simulate(sc.run);
  for (const auto& e : result.events) {
    if (e.rfind("warning", 0) == 0) err << e << '\n';
  }
  if (!key_out.empty()) write_file(key_out, format_key_file_from(result.sifted, false, result.estimate));
  if (!bob_key_out.empty()) write_file(bob_key_out, format_key_file_from(result.sifted, true, result.estimate));

  const auto& s = result.stats;
  if (o.json) {
    json j{{"scenario", sc.name},
           {"status", sim::to_string(result.status)},
           {"abort_reason", result.abort_reason},
           {"pulses", s.pulses},
           {"trains", result.schedule.n_trains},
           {"train_size", result.schedule.train_size},
           {"elapsed_s", s.elapsed_s},
           {"sifted_bits", s.sifted_bits},
           {"sample_size", result.estimate.sample_size},
           {"errors", result.estimate.errors},
           {"qber", result.estimate.d_hat},
           {"qber_2sigma", result.estimate.ci_2sigma},
           {"key_bits", result.key.size()},
           {"measured", report_json(result.measured)},
           {"predicted", report_json(result.predicted)},
           {"security",
            {{"coincidences", result.security.coincidence_count},
             {"coincidences_expected", result.security.coincidence_expected},
             {"power_violations", result.security.power_violations}}}};
    if (events) j["events"] = result.events;
    out << j.dump(2) << '\n';
  } else {
    out << "scenario = " << sc.name << '\n';
    out << "status = " << sim::to_string(result.status) << '\n';
    if (!result.abort_reason.empty()) out << "abort_reason = " << result.abort_reason << '\n';
    out << "pulses = " << s.pulses << '\n';
    out << "trains = " << result.schedule.n_trains << " x " << result.schedule.train_size << '\n';
    out << "elapsed_s = " << fixed(s.elapsed_s, 6) << '\n';
    out << "sifted_bits = " << s.sifted_bits << '\n';
    out << "sample = " << result.estimate.errors << " errors / " << result.estimate.sample_size << '\n';
    out << "key_bits = " << result.key.size() << '\n';
    out << "coincidences = " << result.security.coincidence_count << " (expected "
        << fixed(result.security.coincidence_expected, 2) << ")\n";
    out << '\n' << std::left << std::setw(16) << "" << std::setw(14) << "measured" << "predicted\n";
    auto row = [&](const char* name, double m, double p, int decimals) {
      out << std::setw(16) << name << std::setw(14) << fixed(m, decimals) << fixed(p, decimals) << '\n';
    };
    const auto& m = result.measured;
    const auto& p = result.predicted;
    row("p_click", m.p_click, p.p_click, 7);
    row("eta_tau", m.eta_tau, p.eta_tau, 5);
    row("eta_duty", m.eta_duty, p.eta_duty, 5);
    row("r_raw_khz", m.r_raw_hz / 1e3, p.r_raw_hz / 1e3, 5);
    row("qber_opt_pct", 100 * m.qber_opt, 100 * p.qber_opt, 3);
    row("qber_dark_pct", 100 * m.qber_dark, 100 * p.qber_dark, 3);
    row("qber_after_pct", 100 * m.qber_after, 100 * p.qber_after, 3);
    row("qber_pct", 100 * m.qber_total, 100 * p.qber_total, 3);
    row("r_net_khz", m.r_net_hz / 1e3, p.r_net_hz / 1e3, 5);
    out << std::right;
    out << "qber_2sigma_pct = " << fixed(100 * result.estimate.ci_2sigma, 3) << '\n';
    if (events) {
      for (const auto& e : result.events) out << "event: " << e << '\n';
    }
  }
  return exit_code_for(result.status);
}

int cmd_calibrate(const CommonOptions& o, std::optional<double> guess, std::ostream& out) {
  auto sc = load(o);
  if (guess) sc.run.calibration_guess_km = *guess;
  sc.run.validate();
  const sim::LinkUnderTest link(sc.run.params);
  const auto cal = sim::calibrate_for_run(sc.run, link);
  const double truth = sc.run.params.fiber.length_km;
  out << "scenario = " << sc.name << '\n';
  out << "guess_km = " << fixed(sc.run.guess_km(), 3) << '\n';
  out << "measured_length_km = " << fixed(cal.measured_length_km, 4) << '\n';
  out << "configured_length_km = " << fixed(truth, 4) << '\n';
  out << "error_m = " << fixed((cal.measured_length_km - truth) * 1e3, 2) << '\n';
  out << "round_trip_us = " << fixed(photonics::to_seconds(cal.round_trip) * 1e6, 6) << '\n';
  out << "gate_offset_ns = " << fixed(photonics::to_seconds(cal.gate_offset) * 1e9, 3) << '\n';
  return kExitOk;
}

int cmd_visibility(const CommonOptions& o, std::uint64_t gates, std::ostream& out) {
  const auto sc = load(o);
  Rng rng = RngStreams(sc.run.seed).stream(sim::streams::kVisibility);
  const auto v = sim::measure_visibility(sc.run, gates, rng);
  out << "scenario = " << sc.name << '\n';
  for (const auto& s : v.settings) {
    out << "setting phase=" << s.alice_quarter_turns << "/4pi basis=" << s.bob_basis << " right=" << s.right_counts
        << " wrong=" << s.wrong_counts << " V=" << fixed(s.visibility, 5) << '\n';
  }
  out << "visibility = " << fixed(v.v_mean, 5) << " +- " << fixed(v.v_stderr, 5) << '\n';
  out << "configured_visibility = " << fixed(sc.run.params.visibility(), 5) << '\n';
  if (sc.reference.visibility) {
    out << "reference_visibility = " << fixed(*sc.reference.visibility, 5);
    if (sc.reference.visibility_err) out << " +- " << fixed(*sc.reference.visibility_err, 5);
    out << '\n';
  }
  return kExitOk;
}

void print_session(const net::Session& s, std::ostream& out) {
  const auto& oc = s.outcome();
  out << "role = " << (s.role() == net::Role::Alice ? "alice" : "bob") << '\n';
  out << "phase = " << net::to_string(s.phase()) << '\n';
  if (s.phase() == net::SessionPhase::Aborted) {
    out << "abort = " << net::to_string(s.abort_kind()) << ": " << s.abort_reason() << '\n';
  }
  out << "sifted_bits = " << oc.sifted_indices.size() << '\n';
  out << "sample = " << oc.estimate.errors << " errors / " << oc.estimate.sample_size << '\n';
  out << "qber_pct = " << fixed(100 * oc.estimate.d_hat, 3) << " +- " << fixed(100 * oc.estimate.ci_2sigma, 3) << '\n';
  out << "key_bits = " << oc.key_bits.size() << '\n';
  out << "transcript = " << hex64(s.transcript().combined()) << '\n';
}

int session_exit(const net::Session& s, bool stream_ok, std::ostream& err) {
  if (s.phase() == net::SessionPhase::Done) {
    return kExitOk;
  }
  if (!stream_ok && !s.finished()) {
    err << json{{"error", "io"}, {"message", "connection closed before the session finished"}}.dump() << '\n';
    return kExitFailure;
  }
  err << json{{"error", net::to_string(s.abort_kind())}, {"message", s.abort_reason()}}.dump() << '\n';
  return exit_code_for(s.abort_kind());
}

int cmd_alice(const std::string& listen, const std::string& key_out, std::ostream& out, std::ostream& err) {
  const auto ep = net::listen_endpoint(net::parse_endpoint(listen));
  net::TcpListener listener(ep);
  out << "listening " << ep.host << ':' << listener.port() << std::endl;
  auto stream = listener.accept_one();
  net::AliceSession alice;
  const bool ok = net::run_endpoint(alice, stream);
  print_session(alice, out);
  if (!key_out.empty() && alice.phase() == net::SessionPhase::Done) {
    const auto& oc = alice.outcome();
    write_file(key_out, format_key_file(oc.sifted_indices, oc.sifted_bits, oc.estimate));
  }
  return session_exit(alice, ok, err);
}

int cmd_bob(const CommonOptions& o, const std::string& connect, double timeout_s, const std::string& key_out,
            std::ostream& out, std::ostream& err) {
  auto sc = load(o);
  sc.run.mode = sim::RunMode::Networked;
  net::BobSession bob(sc.run);
  auto stream = net::tcp_connect(net::parse_endpoint(connect), timeout_s);
  const bool ok = net::run_endpoint(bob, stream);
  print_session(bob, out);
  if (!key_out.empty() && bob.phase() == net::SessionPhase::Done) {
    const auto& oc = bob.outcome();
    write_file(key_out, format_key_file(oc.sifted_indices, oc.sifted_bits, oc.estimate));
  }
  return session_exit(bob, ok, err);
}

int cmd_reproduce(const ReproduceOptions& opts, const std::string& out_path, const std::string& checks_path,
                  std::ostream& out) {
  const auto result = reproduce_tables(opts);
  if (out_path.empty() || out_path == "-") {
    out << result.report_csv;
  } else {
    write_file(out_path, result.report_csv);
  }
  if (!checks_path.empty()) {
    write_file(checks_path, result.checks_csv);
  }
  return result.all_pass ? kExitOk : kExitFailure;
}

void print_error(std::ostream& err, const char* kind, const char* message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int exit_code_for(sim::ExchangeStatus status) {
  switch (status) {
    case sim::ExchangeStatus::Completed: return kExitOk;
    case sim::ExchangeStatus::SecurityAbort:
    case sim::ExchangeStatus::QberAbort: return kExitSecurity;
    case sim::ExchangeStatus::NoKey: return kExitFailure;
  }
  return kExitFailure;
}

int exit_code_for(net::AbortKind kind) {
  switch (kind) {
    case net::AbortKind::None: return kExitOk;
    case net::AbortKind::Validation: return kExitValidation;
    case net::AbortKind::Calibration: return kExitCalibration;
    case net::AbortKind::Security:
    case net::AbortKind::Qber: return kExitSecurity;
    case net::AbortKind::Protocol:
    case net::AbortKind::NoKey:
    case net::AbortKind::Peer: return kExitFailure;
  }
  return kExitFailure;
}

std::uint64_t scenario_seed(std::uint64_t base_seed, std::string_view name) {
  return splitmix64(base_seed ^ fnv1a64(name));
}

std::string format_key_file(const std::vector<std::uint64_t>& indices, const std::vector<std::uint8_t>& bits,
                            const protocol::QberEstimate& estimate) {
  std::string out = "sample_size=" + std::to_string(estimate.sample_size) + "\nerrors=" +
                    std::to_string(estimate.errors) + "\nindex,bit\n";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out += std::to_string(indices[i]) + ',' + static_cast<char>('0' + bits[i]) + '\n';
  }
  return out;
}

ReproduceOutput reproduce_tables(const ReproduceOptions& options) {
  std::vector<ScenarioConfig> scenarios;
  for (const auto& b : bundled_scenarios()) {
    auto sc = parse_scenario(b.text);
    sc.run.seed = scenario_seed(options.seed, sc.name);
    if (options.pulses) sc.run.n_pulses_total = *options.pulses;
    sc.run.validate();
    if (!sc.reference.has_rates()) {
      throw ValidationError("bundled scenario " + sc.name + " lacks reference rates");
    }
    scenarios.push_back(std::move(sc));
  }

  // Independent runs with their own seeds; order of completion does not matter.
  std::vector<sim::ExchangeResult> results(scenarios.size());
  const std::size_t jobs = std::max(1u, options.jobs);
  for (std::size_t start = 0; start < scenarios.size(); start += jobs) {
    std::vector<std::future<sim::ExchangeResult>> batch;
    const std::size_t end = std::min(scenarios.size(), start + jobs);
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                 [&cfg = scenarios[i].run] { return sim::simulate(cfg); }));
    }
    for (std::size_t i = start; i < end; ++i) results[i] = batch[i - start].get();
  }

  std::vector<ReportRow> rows;
  std::vector<CheckRow> checks;
  ReproduceOutput output;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& sc = scenarios[i];
    const auto& ref = sc.reference;
    const auto& res = results[i];
    const double length = sc.run.params.fiber.length_km;
    const double loss = sc.run.params.fiber.total_loss_db();

    rows.push_back({sc.name, length, loss, *ref.r_raw_khz, *ref.qber_pct, ref.qber_2sigma_pct.value_or(0.0),
                    *ref.r_net_khz, RowSource::Paper});

    const double predicted_net = reference_net_khz(sc);
    rows.push_back({sc.name, length, loss, *ref.r_raw_khz, *ref.qber_pct, ref.qber_2sigma_pct.value_or(0.0),
                    predicted_net, RowSource::Predicted});

    rows.push_back({sc.name, length, loss, res.measured.r_raw_hz / 1e3, 100.0 * res.estimate.d_hat,
                    100.0 * res.estimate.ci_2sigma, res.measured.r_net_hz / 1e3, RowSource::Measured});

    CheckRow net{sc.name, "r_net_khz", predicted_net, *ref.r_net_khz, 0.10, false, false};
    net.pass = std::abs(predicted_net - *ref.r_net_khz) <= net.tolerance * *ref.r_net_khz;
    output.all_pass = output.all_pass && net.pass;
    checks.push_back(net);

    checks.push_back({sc.name, "r_net_khz_first_principles", res.predicted.r_net_hz / 1e3, *ref.r_net_khz, 0.0,
                      false, true});
    checks.push_back({sc.name, "r_raw_khz_first_principles", res.predicted.r_raw_hz / 1e3, *ref.r_raw_khz, 0.0,
                      false, true});
    checks.push_back({sc.name, "qber_pct_first_principles", 100.0 * res.predicted.qber_total, *ref.qber_pct, 0.0,
                      false, true});
    checks.push_back({sc.name, "qber_pct_measured_vs_first_principles", 100.0 * res.estimate.d_hat,
                      100.0 * res.predicted.qber_total, 0.0, false, true});
  }
  output.report_csv = emit_report(rows);
  output.checks_csv = emit_checks(checks);
  return output;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plug&play quantum key distribution link simulator", "qkdsim"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* analytic = app.add_subcommand("analytic", "Rate-model prediction for a scenario");
  add_scenario_options(analytic, common, false);
  analytic->add_flag("--json", common.json, "JSON output");

  std::string key_out;
  std::string bob_key_out;
  bool events = false;
  auto* simulate = app.add_subcommand("simulate", "Single-process Monte Carlo key exchange");
  add_scenario_options(simulate, common);
  simulate->add_flag("--json", common.json, "JSON output");
  simulate->add_option("--key-out", key_out, "Write Alice's sifted key to this file");
  simulate->add_option("--bob-key-out", bob_key_out, "Write Bob's sifted key to this file");
  simulate->add_flag("--events", events, "Print run events");

  std::optional<double> guess;
  auto* calibrate = app.add_subcommand("calibrate", "Measure the line length with bright pulses");
  add_scenario_options(calibrate, common);
  calibrate->add_option("--guess-km", guess, "Operator's line-length estimate");

  std::uint64_t vis_gates = 4'000'000;
  auto* visibility = app.add_subcommand("visibility", "Measure the interference visibility");
  add_scenario_options(visibility, common, false);
  visibility->add_option("--seed", common.seed, "Base RNG seed");
  visibility->add_option("--gates", vis_gates, "Gates over all four settings")->capture_default_str();

  std::string listen = "127.0.0.1:" + std::to_string(net::kDefaultPort);
  auto* alice = app.add_subcommand("alice", "Run Alice's endpoint (listens; QKDSIM_BIND overrides)");
  alice->add_option("--listen", listen, "host:port to listen on")->capture_default_str();
  alice->add_option("--key-out", key_out, "Write the sifted key to this file");

  std::string connect = "127.0.0.1:" + std::to_string(net::kDefaultPort);
  double timeout_s = 10.0;
  auto* bob = app.add_subcommand("bob", "Run Bob's endpoint (connects to Alice)");
  add_scenario_options(bob, common);
  bob->add_option("--connect", connect, "Alice's host:port")->capture_default_str();
  bob->add_option("--timeout", timeout_s, "Seconds to keep retrying the connection")->capture_default_str();
  bob->add_option("--key-out", key_out, "Write the sifted key to this file");

  ReproduceOptions repro;
  std::string out_path;
  std::string checks_path;
  auto* reproduce = app.add_subcommand("reproduce-tables", "Run all bundled scenarios and emit the comparison CSV");
  reproduce->add_option("--seed", repro.seed, "Base seed; each scenario derives its own")->capture_default_str();
  reproduce->add_option("--pulses", repro.pulses, "Override every scenario's pulse count");
  reproduce->add_option("--jobs", repro.jobs, "Scenarios run in parallel")->capture_default_str();
  reproduce->add_option("-o,--out", out_path, "CSV output path (default stdout)");
  reproduce->add_option("--checks", checks_path, "Write the tolerance checks CSV here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*analytic) return cmd_analytic(common, out);
    if (*simulate) return cmd_simulate(common, key_out, bob_key_out, events, out, err);
    if (*calibrate) return cmd_calibrate(common, guess, out);
    if (*visibility) return cmd_visibility(common, vis_gates, out);
    if (*alice) return cmd_alice(listen, key_out, out, err);
    if (*bob) return cmd_bob(common, connect, timeout_s, key_out, out, err);
    if (*reproduce) return cmd_reproduce(repro, out_path, checks_path, out);
  } catch (const ValidationError& e) {
    print_error(err, "validation", e.what());
    return kExitValidation;
  } catch (const CalibrationError& e) {
    print_error(err, "calibration", e.what());
    return kExitCalibration;
  } catch (const std::exception& e) {
    print_error(err, "runtime", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace qkdsim::cli
