// SPDX-License-Identifier: Apache-2.0
//
// Reliable ordered byte streams for the classical channel: TCP sockets,
// socketpairs, and an in-memory pipe for tests.
#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "qkdsim/netlink/codec.hpp"
#include "qkdsim/netlink/session.hpp"

namespace qkdsim::net {

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Blocks until at least one byte is available; 0 at end of stream.
  virtual std::size_t read_some(std::span<std::uint8_t> buffer) = 0;
};

/// Owns a connected socket or pipe descriptor.
class FdStream final : public ByteStream {
 public:
  explicit FdStream(int fd);
  ~FdStream() override;
  FdStream(FdStream&& other) noexcept;
  FdStream& operator=(FdStream&& other) noexcept;
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  void write_all(std::span<const std::uint8_t> bytes) override;
  std::size_t read_some(std::span<std::uint8_t> buffer) override;
  [[nodiscard]] int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline constexpr std::uint16_t kDefaultPort = 47840;
inline constexpr const char* kBindEnvVar = "QKDSIM_BIND";

/// "host:port", "host" or ":port"; missing parts keep the defaults.
Endpoint parse_endpoint(std::string_view text, Endpoint defaults = {"127.0.0.1", kDefaultPort});

/// The address Alice listens on: QKDSIM_BIND when set, else the fallback.
Endpoint listen_endpoint(const Endpoint& fallback);

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& where);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  [[nodiscard]] std::uint16_t port() const { return port_; }
  FdStream accept_one();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects, retrying until timeout_s while the peer is not yet listening.
FdStream tcp_connect(const Endpoint& where, double timeout_s = 10.0);

/// Two connected local stream sockets.
std::pair<FdStream, FdStream> socket_pair();

/// Drives a session over a stream until it is Done or Aborted. Returns false
/// if the stream closed or failed before that.
bool run_endpoint(Session& session, ByteStream& stream);

/// Runs both sessions to completion in-process, frames passing through
/// encode and FrameReader as on a real stream.
struct InMemoryStats {
  std::size_t frames = 0;
  std::size_t bytes = 0;
};
InMemoryStats run_in_memory(AliceSession& alice, BobSession& bob, std::vector<Bytes>* wire_log = nullptr);

}  // namespace qkdsim::net
