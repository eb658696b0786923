// SPDX-License-Identifier: Apache-2.0
//
// Alice and Bob session state machines. Each endpoint is driven one message
// at a time; step() returns the frames to send in reply.
//
// Message flow (Bob initiates):
//
//   Bob    HELLO                          ->
//          <-                             HELLO          Alice
//   Bob    PARAMS                         ->
//          <-                             PARAMS (echo)
//          <-                             SIMQ, TRAIN_DONE        } per train
//   Bob    CLICK_REPORT, BASIS_REVEAL     ->                      }
//          <-                             SIFT_RESULT             }
//          <-                             SAMPLE_REQUEST | SECURITY_ALERT
//   Bob    SAMPLE_BITS | SECURITY_ALERT   ->
//          <-                             QBER_REPORT, BYE
//   Bob    BYE | ABORT                    ->
//
// Only pulse indices, bases, the compatibility bitmap and the sacrificed
// sample bits ever leave a station. SIMQ stands in for the photons and is
// not part of the classical protocol.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qkdsim/netlink/codec.hpp"
#include "qkdsim/protocol.hpp"
#include "qkdsim/simengine.hpp"

namespace qkdsim::net {

using photonics::PulseIndex;
using photonics::SimTime;

enum class Role : std::uint8_t { Alice, Bob };

enum class SessionPhase : std::uint8_t { Init, Configured, Exchanging, Sifting, Estimating, Done, Aborted };

const char* to_string(SessionPhase phase);

enum class AbortKind : std::uint8_t {
  None,
  Validation,   // PARAMS rejected
  Calibration,  // no reflected-pulse peak
  Security,     // coincidence or incoming-power alarm
  Qber,         // estimate above the abort threshold
  Protocol,     // out-of-phase or malformed message
  NoKey,        // nothing survived sifting
  Peer,         // the other side sent ABORT
};

const char* to_string(AbortKind kind);

/// FNV-1a over every frame in each direction.
class Transcript {
 public:
  void record(Role sender, std::span<const std::uint8_t> frame);
  [[nodiscard]] std::uint64_t alice_to_bob() const { return a2b_; }
  [[nodiscard]] std::uint64_t bob_to_alice() const { return b2a_; }
  [[nodiscard]] std::uint64_t combined() const;

 private:
  std::uint64_t a2b_ = 0xcbf29ce484222325ULL;
  std::uint64_t b2a_ = 0xcbf29ce484222325ULL;
};

/// What one station holds at the end: its own half of the sifted key.
struct SessionOutcome {
  std::vector<PulseIndex> sifted_indices;
  std::vector<std::uint8_t> sifted_bits;
  protocol::QberEstimate estimate;  // remaining is left empty; see key_*
  std::vector<PulseIndex> key_indices;
  std::vector<std::uint8_t> key_bits;
  std::optional<protocol::SecurityReport> security;
};

class Session {
 public:
  virtual ~Session() = default;
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Frames a station sends unprompted at start (Bob's HELLO).
  std::vector<ClassicalMessage> begin();
  /// Feeds one received frame. Never throws: protocol violations move the
  /// session to Aborted and produce an ABORT frame.
  std::vector<ClassicalMessage> step(const ClassicalMessage& incoming);

  [[nodiscard]] Role role() const { return role_; }
  [[nodiscard]] SessionPhase phase() const { return phase_; }
  [[nodiscard]] bool finished() const { return phase_ == SessionPhase::Done || phase_ == SessionPhase::Aborted; }
  [[nodiscard]] const std::vector<SessionPhase>& phase_history() const { return history_; }
  [[nodiscard]] AbortKind abort_kind() const { return abort_kind_; }
  [[nodiscard]] const std::string& abort_reason() const { return abort_reason_; }
  [[nodiscard]] const SessionId& session_id() const { return session_id_; }
  [[nodiscard]] const Transcript& transcript() const { return transcript_; }
  [[nodiscard]] const std::optional<sim::RunConfig>& config() const { return config_; }
  [[nodiscard]] const SessionOutcome& outcome() const { return outcome_; }

 protected:
  explicit Session(Role role) : role_(role) {}

  virtual std::vector<ClassicalMessage> on_begin() { return {}; }
  virtual std::vector<ClassicalMessage> on_message(const ClassicalMessage& m) = 0;

  void enter(SessionPhase phase);
  /// Moves to Aborted; returns the ABORT frame to send.
  ClassicalMessage abort(AbortKind kind, std::string reason);
  void abort_quietly(AbortKind kind, std::string reason);
  ClassicalMessage make(MessageType type, Bytes payload = {}) const;
  [[noreturn]] static void violation(const ClassicalMessage& m, SessionPhase phase);

  Role role_;
  SessionPhase phase_ = SessionPhase::Init;
  std::vector<SessionPhase> history_{SessionPhase::Init};
  AbortKind abort_kind_ = AbortKind::None;
  std::string abort_reason_;
  SessionId session_id_{};
  Transcript transcript_;
  std::optional<sim::RunConfig> config_;
  SessionOutcome outcome_;
};

/// Alice: modulator settings, sifting answers and the error estimate.
class AliceSession final : public Session {
 public:
  AliceSession();
  ~AliceSession() override;

 private:
  std::vector<ClassicalMessage> on_message(const ClassicalMessage& m) override;
  std::vector<ClassicalMessage> send_train();
  std::vector<ClassicalMessage> finish_exchange();

  struct State;
  std::unique_ptr<State> s_;
};

/// Bob: source, detectors and the simulated quantum channel.
class BobSession final : public Session {
 public:
  explicit BobSession(sim::RunConfig config);
  ~BobSession() override;

 private:
  std::vector<ClassicalMessage> on_begin() override;
  std::vector<ClassicalMessage> on_message(const ClassicalMessage& m) override;

  struct State;
  std::unique_ptr<State> s_;
};

// ---- typed payloads ----

struct SimQPayload {
  std::uint64_t block = 0;
  std::vector<std::uint8_t> quarter_turns;  // 0..3 per pulse
};
Bytes encode_simq(const SimQPayload& p);
SimQPayload decode_simq(std::span<const std::uint8_t> payload);

struct ClickReportPayload {
  std::uint64_t block = 0;
  std::vector<PulseIndex> pulses;  // strictly increasing
};
Bytes encode_click_report(const ClickReportPayload& p);
ClickReportPayload decode_click_report(std::span<const std::uint8_t> payload);

/// Used for BASIS_REVEAL (bases) and SIFT_RESULT (compatibility bitmap).
struct BitsPayload {
  std::uint64_t block = 0;
  std::vector<std::uint8_t> bits;
};
Bytes encode_bits(const BitsPayload& p);
BitsPayload decode_bits(std::span<const std::uint8_t> payload);

Bytes encode_block(std::uint64_t block);
std::uint64_t decode_block(std::span<const std::uint8_t> payload);

Bytes encode_index_list(std::span<const PulseIndex> indices);
std::vector<PulseIndex> decode_index_list(std::span<const std::uint8_t> payload);

struct QberReportPayload {
  std::uint32_t errors = 0;
  std::uint32_t sample_size = 0;
};
Bytes encode_qber_report(const QberReportPayload& p);
QberReportPayload decode_qber_report(std::span<const std::uint8_t> payload);

}  // namespace qkdsim::net
