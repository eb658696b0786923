// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/netlink/codec.hpp"

#include <cstring>

namespace qkdsim::net {

bool is_valid_type(std::uint8_t t) {
  return t >= static_cast<std::uint8_t>(MessageType::Hello) && t <= static_cast<std::uint8_t>(MessageType::SimQ);
}

const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::Hello: return "HELLO";
    case MessageType::Params: return "PARAMS";
    case MessageType::TrainDone: return "TRAIN_DONE";
    case MessageType::ClickReport: return "CLICK_REPORT";
    case MessageType::BasisReveal: return "BASIS_REVEAL";
    case MessageType::SiftResult: return "SIFT_RESULT";
    case MessageType::SampleRequest: return "SAMPLE_REQUEST";
    case MessageType::SampleBits: return "SAMPLE_BITS";
    case MessageType::QberReport: return "QBER_REPORT";
    case MessageType::SecurityAlert: return "SECURITY_ALERT";
    case MessageType::Abort: return "ABORT";
    case MessageType::Bye: return "BYE";
    case MessageType::SimQ: return "SIMQ";
  }
  return "?";
}

const char* to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::Incomplete: return "truncated frame";
    case DecodeStatus::BadMagic: return "bad magic";
    case DecodeStatus::BadVersion: return "unsupported version";
    case DecodeStatus::UnknownType: return "unknown message type";
  }
  return "?";
}

void encode_into(const ClassicalMessage& msg, Bytes& out) {
  if (msg.payload.size() > kMaxPayload) {
    throw std::length_error("payload exceeds 2^24 - 1 bytes");
  }
  if (!is_valid_type(static_cast<std::uint8_t>(msg.type))) {
    throw std::invalid_argument("invalid message type");
  }
  const auto len = static_cast<std::uint32_t>(msg.payload.size());
  out.reserve(out.size() + kHeaderSize + msg.payload.size());
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(msg.type));
  out.insert(out.end(), msg.session_id.begin(), msg.session_id.end());
  out.push_back(static_cast<std::uint8_t>(len >> 16));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
}

Bytes encode(const ClassicalMessage& msg) {
  Bytes out;
  encode_into(msg, out);
  return out;
}

DecodeResult try_decode(std::span<const std::uint8_t> data) {
  DecodeResult r;
  // Reject bad leading bytes as early as they are visible.
  if (!data.empty() && data[0] != kMagic0) return {DecodeStatus::BadMagic, {}, 0};
  if (data.size() > 1 && data[1] != kMagic1) return {DecodeStatus::BadMagic, {}, 0};
  if (data.size() > 2 && data[2] != kVersion) return {DecodeStatus::BadVersion, {}, 0};
  if (data.size() > 3 && !is_valid_type(data[3])) return {DecodeStatus::UnknownType, {}, 0};
  if (data.size() < kHeaderSize) {
    return r;
  }
  const std::size_t len = (std::size_t{data[12]} << 16) | (std::size_t{data[13]} << 8) | std::size_t{data[14]};
  if (data.size() - kHeaderSize < len) {
    return r;
  }
  ClassicalMessage msg;
  msg.type = static_cast<MessageType>(data[3]);
  std::memcpy(msg.session_id.data(), data.data() + 4, msg.session_id.size());
  msg.payload.assign(data.begin() + kHeaderSize, data.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + len));
  r.status = DecodeStatus::Ok;
  r.message = std::move(msg);
  r.consumed = kHeaderSize + len;
  return r;
}

ClassicalMessage decode(std::span<const std::uint8_t> frame) {
  auto r = try_decode(frame);
  if (r.status != DecodeStatus::Ok) {
    throw DecodeError(r.status, to_string(r.status));
  }
  if (r.consumed != frame.size()) {
    throw DecodeError(DecodeStatus::Incomplete, "trailing bytes after frame");
  }
  return std::move(*r.message);
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<ClassicalMessage> FrameReader::next() {
  auto r = try_decode(std::span<const std::uint8_t>(buffer_).subspan(offset_));
  switch (r.status) {
    case DecodeStatus::Ok:
      offset_ += r.consumed;
      if (offset_ > (1u << 16) && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
      }
      return std::move(r.message);
    case DecodeStatus::Incomplete:
      return std::nullopt;
    default:
      throw DecodeError(r.status, to_string(r.status));
  }
}

PayloadWriter& PayloadWriter::u8(std::uint8_t v) {
  out_.push_back(v);
  return *this;
}

PayloadWriter& PayloadWriter::u32(std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

PayloadWriter& PayloadWriter::u64(std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

PayloadWriter& PayloadWriter::varint(std::uint64_t v) {
  while (v >= 0x80) {
    out_.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out_.push_back(static_cast<std::uint8_t>(v));
  return *this;
}

PayloadWriter& PayloadWriter::bytes(std::span<const std::uint8_t> v) {
  out_.insert(out_.end(), v.begin(), v.end());
  return *this;
}

PayloadWriter& PayloadWriter::text(std::string_view v) {
  out_.insert(out_.end(), v.begin(), v.end());
  return *this;
}

std::uint8_t PayloadReader::u8() { return bytes(1)[0]; }

std::uint32_t PayloadReader::u32() {
  auto b = bytes(4);
  std::uint32_t v = 0;
  for (auto x : b) v = (v << 8) | x;
  return v;
}

std::uint64_t PayloadReader::u64() {
  auto b = bytes(8);
  std::uint64_t v = 0;
  for (auto x : b) v = (v << 8) | x;
  return v;
}

std::uint64_t PayloadReader::varint() {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    const std::uint8_t b = u8();
    v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
    if ((b & 0x80) == 0) {
      return v;
    }
  }
  throw DecodeError(DecodeStatus::Incomplete, "varint longer than 64 bits");
}

std::span<const std::uint8_t> PayloadReader::bytes(std::size_t n) {
  if (n > data_.size() - pos_) {
    throw DecodeError(DecodeStatus::Incomplete, "payload shorter than its fields");
  }
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string PayloadReader::rest_text() {
  auto b = bytes(data_.size() - pos_);
  return std::string(b.begin(), b.end());
}

void PayloadReader::expect_done() const {
  if (!done()) {
    throw DecodeError(DecodeStatus::Incomplete, "unexpected bytes after payload fields");
  }
}

Bytes pack_bits(std::span<const std::uint8_t> bits) {
  Bytes out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t n) {
  if (packed.size() != (n + 7) / 8) {
    throw DecodeError(DecodeStatus::Incomplete, "bit vector length mismatch");
  }
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

void write_index_list(PayloadWriter& w, std::uint64_t base, std::span<const std::uint64_t> indices) {
  w.varint(indices.size());
  std::uint64_t prev = base;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < prev || (i > 0 && indices[i] == prev)) {
      throw std::invalid_argument("index list must be strictly increasing and >= base");
    }
    w.varint(i == 0 ? indices[i] - base : indices[i] - prev - 1);
    prev = indices[i];
  }
}

std::vector<std::uint64_t> read_index_list(PayloadReader& r, std::uint64_t base) {
  const std::uint64_t n = r.varint();
  std::vector<std::uint64_t> out;
  std::uint64_t prev = base;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t d = r.varint();
    const std::uint64_t next = i == 0 ? base + d : prev + d + 1;
    if (next < prev) {
      throw DecodeError(DecodeStatus::Incomplete, "index list overflows");
    }
    out.push_back(next);
    prev = next;
  }
  return out;
}

}  // namespace qkdsim::net
