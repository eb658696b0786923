// SPDX-License-Identifier: Apache-2.0
//
// Framing of the classical Alice <-> Bob channel.
//
//   magic 0x51 0x4B | version | type | session_id[8] | payload_len[3, BE] | payload
//
// and the typed payloads carried in it.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qkdsim::net {

using Bytes = std::vector<std::uint8_t>;
using SessionId = std::array<std::uint8_t, 8>;

inline constexpr std::uint8_t kMagic0 = 0x51;
inline constexpr std::uint8_t kMagic1 = 0x4B;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 15;
inline constexpr std::size_t kMaxPayload = (1u << 24) - 1;

enum class MessageType : std::uint8_t {
  Hello = 1,
  Params = 2,
  TrainDone = 3,
  ClickReport = 4,
  BasisReveal = 5,
  SiftResult = 6,
  SampleRequest = 7,
  SampleBits = 8,
  QberReport = 9,
  SecurityAlert = 10,
  Abort = 11,
  Bye = 12,
  /// Simulation-only: Alice's per-pulse phase indices for Bob's channel model.
  SimQ = 13,
};

bool is_valid_type(std::uint8_t t);
const char* to_string(MessageType t);

struct ClassicalMessage {
  MessageType type = MessageType::Hello;
  SessionId session_id{};
  Bytes payload;

  friend bool operator==(const ClassicalMessage&, const ClassicalMessage&) = default;
};

enum class DecodeStatus : std::uint8_t { Ok, Incomplete, BadMagic, BadVersion, UnknownType };

const char* to_string(DecodeStatus s);

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeStatus status, const std::string& what) : std::runtime_error(what), status_(status) {}
  [[nodiscard]] DecodeStatus status() const { return status_; }

 private:
  DecodeStatus status_;
};

struct DecodeResult {
  DecodeStatus status = DecodeStatus::Incomplete;
  std::optional<ClassicalMessage> message;
  std::size_t consumed = 0;
};

Bytes encode(const ClassicalMessage& msg);
void encode_into(const ClassicalMessage& msg, Bytes& out);

/// Decodes the frame at the front of data. Never throws; a frame whose
/// declared payload runs past the buffer is Incomplete.
DecodeResult try_decode(std::span<const std::uint8_t> data);

/// Strict decode of exactly one frame. Truncation and trailing bytes throw
/// DecodeError (Incomplete for truncation).
ClassicalMessage decode(std::span<const std::uint8_t> frame);

/// Reassembles frames from an arbitrarily chunked byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete frame, or nullopt. A malformed header throws DecodeError.
  std::optional<ClassicalMessage> next();
  [[nodiscard]] std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  Bytes buffer_;
  std::size_t offset_ = 0;
};

// ---- payload helpers ----

class PayloadWriter {
 public:
  PayloadWriter& u8(std::uint8_t v);
  PayloadWriter& u32(std::uint32_t v);
  PayloadWriter& u64(std::uint64_t v);
  PayloadWriter& varint(std::uint64_t v);
  PayloadWriter& bytes(std::span<const std::uint8_t> v);
  PayloadWriter& text(std::string_view v);
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

/// Bounds-checked reader; every overrun throws DecodeError(Incomplete).
class PayloadReader {
 public:
  explicit PayloadReader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::uint64_t varint();
  std::span<const std::uint8_t> bytes(std::size_t n);
  std::string rest_text();
  [[nodiscard]] bool done() const { return pos_ == data_.size(); }
  void expect_done() const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// LSB-first bit packing of 0/1 values.
Bytes pack_bits(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t n);

/// Strictly increasing indices as (count, first - base, deltas - 1...) varints.
void write_index_list(PayloadWriter& w, std::uint64_t base, std::span<const std::uint64_t> indices);
std::vector<std::uint64_t> read_index_list(PayloadReader& r, std::uint64_t base);

}  // namespace qkdsim::net
