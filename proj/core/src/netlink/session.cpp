// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/netlink/session.hpp"

#include <algorithm>

#include "qkdsim/errors.hpp"

namespace qkdsim::net {
namespace {

using photonics::ClickRecord;
using photonics::QuantumFrame;

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv_update(std::uint64_t h, std::span<const std::uint8_t> bytes) {
  for (auto b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

std::string payload_text(const ClassicalMessage& m) { return std::string(m.payload.begin(), m.payload.end()); }

Bytes text_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace

const char* to_string(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::Init: return "init";
    case SessionPhase::Configured: return "configured";
    case SessionPhase::Exchanging: return "exchanging";
    case SessionPhase::Sifting: return "sifting";
    case SessionPhase::Estimating: return "estimating";
    case SessionPhase::Done: return "done";
    case SessionPhase::Aborted: return "aborted";
  }
  return "?";
}

const char* to_string(AbortKind kind) {
  switch (kind) {
    case AbortKind::None: return "none";
    case AbortKind::Validation: return "validation";
    case AbortKind::Calibration: return "calibration";
    case AbortKind::Security: return "security";
    case AbortKind::Qber: return "qber";
    case AbortKind::Protocol: return "protocol";
    case AbortKind::NoKey: return "no-key";
    case AbortKind::Peer: return "peer";
  }
  return "?";
}

void Transcript::record(Role sender, std::span<const std::uint8_t> frame) {
  auto& h = sender == Role::Alice ? a2b_ : b2a_;
  h = fnv_update(h, frame);
}

std::uint64_t Transcript::combined() const {
  std::array<std::uint8_t, 16> both{};
  for (int i = 0; i < 8; ++i) {
    both[i] = static_cast<std::uint8_t>(a2b_ >> (56 - 8 * i));
    both[8 + i] = static_cast<std::uint8_t>(b2a_ >> (56 - 8 * i));
  }
  return fnv_update(0xcbf29ce484222325ULL, both);
}

// ---- Session ----

std::vector<ClassicalMessage> Session::begin() {
  auto out = on_begin();
  for (const auto& m : out) transcript_.record(role_, encode(m));
  return out;
}

std::vector<ClassicalMessage> Session::step(const ClassicalMessage& incoming) {
  if (finished()) {
    return {};
  }
  const Role peer = role_ == Role::Alice ? Role::Bob : Role::Alice;
  transcript_.record(peer, encode(incoming));

  std::vector<ClassicalMessage> out;
  try {
    const bool has_id = phase_ != SessionPhase::Init || role_ == Role::Bob;
    if (has_id && incoming.session_id != session_id_) {
      throw ProtocolError("session id mismatch");
    }
    if (incoming.type == MessageType::Abort) {
      abort_quietly(AbortKind::Peer, "peer aborted: " + payload_text(incoming));
    } else if (incoming.type == MessageType::SecurityAlert) {
      abort_quietly(AbortKind::Security, "peer security alert: " + payload_text(incoming));
    } else {
      out = on_message(incoming);
    }
  } catch (const CalibrationError& e) {
    out = {abort(AbortKind::Calibration, e.what())};
  } catch (const std::exception& e) {
    out = {abort(AbortKind::Protocol, e.what())};
  }
  for (const auto& m : out) transcript_.record(role_, encode(m));
  return out;
}

void Session::enter(SessionPhase phase) {
  if (phase_ == phase) {
    return;
  }
  phase_ = phase;
  history_.push_back(phase);
}

void Session::abort_quietly(AbortKind kind, std::string reason) {
  abort_kind_ = kind;
  abort_reason_ = std::move(reason);
  outcome_.key_indices.clear();
  outcome_.key_bits.clear();
  enter(SessionPhase::Aborted);
}

ClassicalMessage Session::abort(AbortKind kind, std::string reason) {
  auto msg = make(MessageType::Abort, text_bytes(reason));
  abort_quietly(kind, std::move(reason));
  return msg;
}

ClassicalMessage Session::make(MessageType type, Bytes payload) const {
  return ClassicalMessage{type, session_id_, std::move(payload)};
}

void Session::violation(const ClassicalMessage& m, SessionPhase phase) {
  throw ProtocolError(std::string(to_string(m.type)) + " not expected in phase " + to_string(phase));
}

// ---- Alice ----

struct AliceSession::State {
  bool hello_seen = false;
  sim::TrainSchedule schedule;
  std::optional<sim::AliceStation> station;
  std::uint64_t train = 0;
  std::vector<QuantumFrame> frames;
  std::optional<ClickReportPayload> report;
  std::vector<double> power_samples;
  std::vector<std::size_t> sample_positions;
  bool awaiting_bye = false;
};

AliceSession::AliceSession() : Session(Role::Alice), s_(std::make_unique<State>()) {}
AliceSession::~AliceSession() = default;

std::vector<ClassicalMessage> AliceSession::send_train() {
  s_->frames = s_->station->modulate_train(s_->train);
  s_->power_samples.push_back(s_->station->incoming_power_sample());
  SimQPayload q;
  q.block = s_->train;
  q.quarter_turns.resize(s_->frames.size());
  std::transform(s_->frames.begin(), s_->frames.end(), q.quarter_turns.begin(),
                 [](const QuantumFrame& f) { return static_cast<std::uint8_t>(f.alice_quarter_turns()); });
  enter(SessionPhase::Exchanging);
  return {make(MessageType::SimQ, encode_simq(q)), make(MessageType::TrainDone, encode_block(s_->train))};
}

std::vector<ClassicalMessage> AliceSession::finish_exchange() {
  const auto& c = *config_;
  auto report = protocol::security_check({}, c.n_pulses_total, 0.0, s_->power_samples, s_->station->power_bounds());
  outcome_.security = report;
  if (report.verdict == protocol::Verdict::Alert) {
    auto alert = make(MessageType::SecurityAlert, text_bytes(report.reason));
    abort_quietly(AbortKind::Security, report.reason);
    return {alert};
  }
  if (outcome_.sifted_indices.empty()) {
    return {abort(AbortKind::NoKey, "no sifted bits")};
  }
  Rng sampling = RngStreams(c.seed).stream(sim::streams::kAliceSampling);
  s_->sample_positions = protocol::choose_sample(outcome_.sifted_indices.size(), c.sample_fraction, sampling);
  std::vector<PulseIndex> indices;
  indices.reserve(s_->sample_positions.size());
  for (auto pos : s_->sample_positions) indices.push_back(outcome_.sifted_indices[pos]);
  enter(SessionPhase::Estimating);
  return {make(MessageType::SampleRequest, encode_index_list(indices))};
}

std::vector<ClassicalMessage> AliceSession::on_message(const ClassicalMessage& m) {
  switch (phase_) {
    case SessionPhase::Init:
      if (m.type == MessageType::Hello && !s_->hello_seen) {
        s_->hello_seen = true;
        session_id_ = m.session_id;
        return {make(MessageType::Hello)};
      }
      if (m.type == MessageType::Params && s_->hello_seen) {
        if (m.session_id != session_id_) {
          throw ProtocolError("session id mismatch");
        }
        sim::RunConfig cfg;
        try {
          cfg = sim::parse_run_config(payload_text(m));
        } catch (const ValidationError& e) {
          return {abort(AbortKind::Validation, std::string("rejected parameters: ") + e.what())};
        }
        config_ = cfg;
        s_->schedule = sim::schedule_for_run(cfg, SimTime{0});
        s_->station.emplace(*config_, s_->schedule);
        enter(SessionPhase::Configured);
        std::vector<ClassicalMessage> out{make(MessageType::Params, text_bytes(sim::serialize_run_config(cfg)))};
        auto train = send_train();
        out.insert(out.end(), train.begin(), train.end());
        return out;
      }
      break;

    case SessionPhase::Exchanging:
      if (m.type == MessageType::ClickReport) {
        auto report = decode_click_report(m.payload);
        if (report.block != s_->train) {
          throw ProtocolError("click report for block " + std::to_string(report.block) + ", expected " +
                              std::to_string(s_->train));
        }
        s_->report = std::move(report);
        enter(SessionPhase::Sifting);
        return {};
      }
      break;

    case SessionPhase::Sifting:
      if (m.type == MessageType::BasisReveal) {
        auto bases = decode_bits(m.payload);
        if (bases.block != s_->train || bases.bits.size() != s_->report->pulses.size()) {
          throw ProtocolError("basis reveal does not match the click report");
        }
        for (auto b : bases.bits) {
          if (b > 1) throw ProtocolError("basis out of range");
        }
        const auto& pulses = s_->report->pulses;
        auto mask = protocol::compatible_mask(s_->frames, pulses, bases.bits);
        const PulseIndex first = s_->schedule.first_pulse(s_->train);
        for (std::size_t i = 0; i < pulses.size(); ++i) {
          if (mask[i]) {
            outcome_.sifted_indices.push_back(pulses[i]);
            outcome_.sifted_bits.push_back(s_->frames[pulses[i] - first].alice_bit);
          }
        }
        std::vector<ClassicalMessage> out{make(MessageType::SiftResult, encode_bits({s_->train, std::move(mask)}))};
        s_->report.reset();
        ++s_->train;
        auto next = s_->train < s_->schedule.n_trains ? send_train() : finish_exchange();
        out.insert(out.end(), next.begin(), next.end());
        return out;
      }
      break;

    case SessionPhase::Estimating:
      if (m.type == MessageType::SampleBits && !s_->awaiting_bye) {
        auto bits = decode_bits(m.payload);
        if (bits.bits.size() != s_->sample_positions.size()) {
          throw ProtocolError("sample bits do not match the request");
        }
        std::size_t errors = 0;
        std::vector<std::uint8_t> disclosed(outcome_.sifted_indices.size(), 0);
        for (std::size_t i = 0; i < bits.bits.size(); ++i) {
          const auto pos = s_->sample_positions[i];
          errors += outcome_.sifted_bits[pos] != bits.bits[i] ? 1 : 0;
          disclosed[pos] = 1;
        }
        auto est = protocol::qber_from_counts(errors, bits.bits.size());
        for (std::size_t i = 0; i < disclosed.size(); ++i) {
          if (disclosed[i]) {
            est.disclosed_indices.push_back(outcome_.sifted_indices[i]);
          } else {
            outcome_.key_indices.push_back(outcome_.sifted_indices[i]);
            outcome_.key_bits.push_back(outcome_.sifted_bits[i]);
          }
        }
        outcome_.estimate = est;
        auto report = make(MessageType::QberReport, encode_qber_report({static_cast<std::uint32_t>(errors),
                                                                         static_cast<std::uint32_t>(est.sample_size)}));
        if (est.d_hat > config_->qber_abort_threshold) {
          abort_quietly(AbortKind::Qber, "estimated QBER " + std::to_string(est.d_hat) + " above abort threshold");
          return {report};
        }
        s_->awaiting_bye = true;
        return {report, make(MessageType::Bye)};
      }
      if (m.type == MessageType::Bye && s_->awaiting_bye) {
        enter(SessionPhase::Done);
        return {};
      }
      break;

    default:
      break;
  }
  violation(m, phase_);
}

// ---- Bob ----

struct BobSession::State {
  bool hello_seen = false;
  bool params_sent = false;
  std::optional<sim::LinkUnderTest> link;
  sim::TrainSchedule schedule;
  rate::RateReport predicted;
  std::optional<sim::BobStation> station;
  std::uint64_t block = 0;
  std::optional<sim::TrainDetection> detection;
  std::vector<protocol::SingleClick> reported;
  bool awaiting_sift = false;
  std::vector<ClickRecord> clicks;
  std::vector<std::size_t> sample_positions;
  bool sample_sent = false;
  bool qber_ok = false;
};

BobSession::BobSession(sim::RunConfig config) : Session(Role::Bob), s_(std::make_unique<State>()) {
  config.validate();
  config_ = std::move(config);
}

BobSession::~BobSession() = default;

std::vector<ClassicalMessage> BobSession::on_begin() {
  if (s_->hello_seen || s_->params_sent || phase_ != SessionPhase::Init) {
    return {};
  }
  Rng rng = RngStreams(config_->seed).stream(sim::streams::kSession);
  const std::uint64_t id = rng();
  for (int i = 0; i < 8; ++i) session_id_[i] = static_cast<std::uint8_t>(id >> (56 - 8 * i));
  return {make(MessageType::Hello)};
}

std::vector<ClassicalMessage> BobSession::on_message(const ClassicalMessage& m) {
  const auto& c = *config_;
  switch (phase_) {
    case SessionPhase::Init:
      if (m.type == MessageType::Hello && !s_->hello_seen) {
        s_->hello_seen = true;
        s_->params_sent = true;
        return {make(MessageType::Params, text_bytes(sim::serialize_run_config(c)))};
      }
      if (m.type == MessageType::Params && s_->params_sent) {
        if (payload_text(m) != sim::serialize_run_config(c)) {
          return {abort(AbortKind::Validation, "parameter echo does not match")};
        }
        s_->link.emplace(c.params);
        const auto calibration = sim::calibrate_for_run(c, *s_->link);
        s_->schedule = sim::schedule_for_run(c, calibration.gate_offset);
        s_->predicted = sim::predict_for_run(c, s_->schedule);
        s_->station.emplace(c, s_->schedule, *s_->link, calibration);
        enter(SessionPhase::Configured);
        return {};
      }
      break;

    case SessionPhase::Configured:
    case SessionPhase::Exchanging:
      if (m.type == MessageType::SimQ && !s_->detection) {
        auto q = decode_simq(m.payload);
        if (q.block != s_->block) {
          throw ProtocolError("SIMQ for block " + std::to_string(q.block) + ", expected " +
                              std::to_string(s_->block));
        }
        s_->detection = s_->station->detect_train(q.block, q.quarter_turns);
        enter(SessionPhase::Exchanging);
        return {};
      }
      if (m.type == MessageType::TrainDone && s_->detection) {
        if (decode_block(m.payload) != s_->block) {
          throw ProtocolError("TRAIN_DONE for the wrong block");
        }
        const auto& det = *s_->detection;
        s_->clicks.insert(s_->clicks.end(), det.clicks.begin(), det.clicks.end());
        s_->reported = protocol::single_clicks(det.clicks);
        ClickReportPayload report{s_->block, {}};
        BitsPayload bases{s_->block, {}};
        const PulseIndex first = s_->schedule.first_pulse(s_->block);
        for (const auto& sc : s_->reported) {
          report.pulses.push_back(sc.pulse_index);
          bases.bits.push_back(det.frames[sc.pulse_index - first].bob_basis);
        }
        enter(SessionPhase::Sifting);
        return {make(MessageType::ClickReport, encode_click_report(report)),
                make(MessageType::BasisReveal, encode_bits(bases))};
      }
      break;

    case SessionPhase::Sifting:
      if (m.type == MessageType::SiftResult) {
        auto mask = decode_bits(m.payload);
        if (mask.block != s_->block || mask.bits.size() != s_->reported.size()) {
          throw ProtocolError("sift result does not match the click report");
        }
        for (std::size_t i = 0; i < mask.bits.size(); ++i) {
          if (mask.bits[i] > 1) throw ProtocolError("sift bitmap value out of range");
          if (mask.bits[i]) {
            outcome_.sifted_indices.push_back(s_->reported[i].pulse_index);
            outcome_.sifted_bits.push_back(protocol::bit_for(s_->reported[i].detector));
          }
        }
        s_->detection.reset();
        s_->reported.clear();
        ++s_->block;
        enter(s_->block < s_->schedule.n_trains ? SessionPhase::Exchanging : SessionPhase::Estimating);
        return {};
      }
      break;

    case SessionPhase::Estimating:
      if (m.type == MessageType::SampleRequest && !s_->sample_sent) {
        const auto indices = decode_index_list(m.payload);
        const auto& sifted = outcome_.sifted_indices;
        BitsPayload bits;
        for (PulseIndex idx : indices) {
          auto it = std::lower_bound(sifted.begin(), sifted.end(), idx);
          if (it == sifted.end() || *it != idx) {
            throw ProtocolError("sample request names a pulse outside the sifted key");
          }
          const auto pos = static_cast<std::size_t>(it - sifted.begin());
          s_->sample_positions.push_back(pos);
          bits.bits.push_back(outcome_.sifted_bits[pos]);
        }
        if (indices.empty()) {
          throw ProtocolError("empty sample request");
        }
        auto report = protocol::security_check(s_->clicks, c.n_pulses_total, s_->predicted.p_coincidence, {},
                                               protocol::PowerBounds{});
        outcome_.security = report;
        if (report.verdict == protocol::Verdict::Alert) {
          auto alert = make(MessageType::SecurityAlert, text_bytes(report.reason));
          abort_quietly(AbortKind::Security, report.reason);
          return {alert};
        }
        s_->sample_sent = true;
        return {make(MessageType::SampleBits, encode_bits(bits))};
      }
      if (m.type == MessageType::QberReport && s_->sample_sent && !s_->qber_ok) {
        const auto r = decode_qber_report(m.payload);
        if (r.sample_size != s_->sample_positions.size()) {
          throw ProtocolError("QBER report does not cover the disclosed sample");
        }
        auto est = protocol::qber_from_counts(r.errors, r.sample_size);
        std::vector<std::uint8_t> disclosed(outcome_.sifted_indices.size(), 0);
        for (auto pos : s_->sample_positions) disclosed[pos] = 1;
        for (std::size_t i = 0; i < disclosed.size(); ++i) {
          if (disclosed[i]) {
            est.disclosed_indices.push_back(outcome_.sifted_indices[i]);
          } else {
            outcome_.key_indices.push_back(outcome_.sifted_indices[i]);
            outcome_.key_bits.push_back(outcome_.sifted_bits[i]);
          }
        }
        outcome_.estimate = est;
        if (est.d_hat > c.qber_abort_threshold) {
          return {abort(AbortKind::Qber, "estimated QBER " + std::to_string(est.d_hat) + " above abort threshold")};
        }
        s_->qber_ok = true;
        return {};
      }
      if (m.type == MessageType::Bye && s_->qber_ok) {
        enter(SessionPhase::Done);
        return {make(MessageType::Bye)};
      }
      break;

    default:
      break;
  }
  violation(m, phase_);
}

// ---- payloads ----

Bytes encode_simq(const SimQPayload& p) {
  PayloadWriter w;
  w.u64(p.block).u32(static_cast<std::uint32_t>(p.quarter_turns.size()));
  Bytes packed((p.quarter_turns.size() + 3) / 4, 0);
  for (std::size_t i = 0; i < p.quarter_turns.size(); ++i) {
    if (p.quarter_turns[i] > 3) throw std::invalid_argument("phase index out of range");
    packed[i / 4] |= static_cast<std::uint8_t>(p.quarter_turns[i] << (2 * (i % 4)));
  }
  w.bytes(packed);
  return w.take();
}

SimQPayload decode_simq(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  SimQPayload p;
  p.block = r.u64();
  const std::size_t n = r.u32();
  const auto packed = r.bytes((n + 3) / 4);
  r.expect_done();
  p.quarter_turns.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.quarter_turns[i] = (packed[i / 4] >> (2 * (i % 4))) & 3u;
  return p;
}

Bytes encode_click_report(const ClickReportPayload& p) {
  PayloadWriter w;
  w.u64(p.block);
  write_index_list(w, 0, p.pulses);
  return w.take();
}

ClickReportPayload decode_click_report(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  ClickReportPayload p;
  p.block = r.u64();
  p.pulses = read_index_list(r, 0);
  r.expect_done();
  return p;
}

Bytes encode_bits(const BitsPayload& p) {
  PayloadWriter w;
  w.u64(p.block).u32(static_cast<std::uint32_t>(p.bits.size())).bytes(pack_bits(p.bits));
  return w.take();
}

BitsPayload decode_bits(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  BitsPayload p;
  p.block = r.u64();
  const std::size_t n = r.u32();
  p.bits = unpack_bits(r.bytes((n + 7) / 8), n);
  r.expect_done();
  return p;
}

Bytes encode_block(std::uint64_t block) {
  PayloadWriter w;
  w.u64(block);
  return w.take();
}

std::uint64_t decode_block(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  const auto block = r.u64();
  r.expect_done();
  return block;
}

Bytes encode_index_list(std::span<const PulseIndex> indices) {
  PayloadWriter w;
  write_index_list(w, 0, indices);
  return w.take();
}

std::vector<PulseIndex> decode_index_list(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  auto out = read_index_list(r, 0);
  r.expect_done();
  return out;
}

Bytes encode_qber_report(const QberReportPayload& p) {
  PayloadWriter w;
  w.u32(p.errors).u32(p.sample_size);
  return w.take();
}

QberReportPayload decode_qber_report(std::span<const std::uint8_t> payload) {
  PayloadReader r(payload);
  QberReportPayload p;
  p.errors = r.u32();
  p.sample_size = r.u32();
  r.expect_done();
  return p;
}

}  // namespace qkdsim::net
