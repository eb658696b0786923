// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/netlink/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <system_error>
#include <thread>

#include "qkdsim/errors.hpp"

namespace qkdsim::net {
namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

sockaddr_in resolve(const Endpoint& where) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(where.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw ValidationError("cannot resolve host '" + where.host + "': " + ::gai_strerror(rc));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(where.port);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

FdStream::FdStream(int fd) : fd_(fd) {}

FdStream::~FdStream() {
  if (fd_ >= 0) ::close(fd_);
}

FdStream::FdStream(FdStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

FdStream& FdStream::operator=(FdStream&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

void FdStream::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) {
      n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write");
    }
    done += static_cast<std::size_t>(n);
  }
}

std::size_t FdStream::read_some(std::span<std::uint8_t> buffer) {
  for (;;) {
    const ssize_t n = ::read(fd_, buffer.data(), buffer.size());
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw_errno("read");
  }
}

Endpoint parse_endpoint(std::string_view text, Endpoint defaults) {
  Endpoint e = std::move(defaults);
  const auto colon = text.rfind(':');
  const auto host = text.substr(0, colon);
  if (!host.empty()) e.host = std::string(host);
  if (colon != std::string_view::npos) {
    const auto port_text = text.substr(colon + 1);
    unsigned long port = 0;
    const std::string s(port_text);
    char* end = nullptr;
    port = std::strtoul(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || port > 65535) {
      throw ValidationError("bad port in endpoint '" + std::string(text) + "'");
    }
    e.port = static_cast<std::uint16_t>(port);
  }
  return e;
}

Endpoint listen_endpoint(const Endpoint& fallback) {
  if (const char* env = std::getenv(kBindEnvVar); env != nullptr && *env != '\0') {
    return parse_endpoint(env, fallback);
  }
  return fallback;
}

TcpListener::TcpListener(const Endpoint& where) {
  const auto addr = resolve(where);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    throw_errno("bind " + where.host + ":" + std::to_string(where.port));
  }
  if (::listen(fd_, 1) != 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    throw_errno("listen");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

FdStream TcpListener::accept_one() {
  for (;;) {
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      set_nodelay(fd);
      return FdStream(fd);
    }
    if (errno != EINTR) throw_errno("accept");
  }
}

FdStream tcp_connect(const Endpoint& where, double timeout_s) {
  const auto addr = resolve(where);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw_errno("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      set_nodelay(fd);
      return FdStream(fd);
    }
    const int err = errno;
    ::close(fd);
    if ((err != ECONNREFUSED && err != EINTR) || std::chrono::steady_clock::now() >= deadline) {
      errno = err;
      throw_errno("connect " + where.host + ":" + std::to_string(where.port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

std::pair<FdStream, FdStream> socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) throw_errno("socketpair");
  return {FdStream(fds[0]), FdStream(fds[1])};
}

bool run_endpoint(Session& session, ByteStream& stream) {
  Bytes out;
  auto flush = [&](const std::vector<ClassicalMessage>& msgs) {
    out.clear();
    for (const auto& m : msgs) encode_into(m, out);
    if (!out.empty()) {
      try {
        stream.write_all(out);
      } catch (const std::system_error&) {
        // Peer already gone; only fatal if we still expected a reply.
        if (!session.finished()) throw;
      }
    }
  };

  flush(session.begin());
  FrameReader reader;
  std::vector<std::uint8_t> buf(1 << 16);
  while (!session.finished()) {
    const std::size_t n = stream.read_some(buf);
    if (n == 0) {
      return false;
    }
    reader.feed(std::span<const std::uint8_t>(buf.data(), n));
    for (;;) {
      std::optional<ClassicalMessage> msg;
      try {
        msg = reader.next();
      } catch (const DecodeError& e) {
        // Unframeable input: nothing more can be trusted on this stream.
        ClassicalMessage abort{MessageType::Abort, session.session_id(), {}};
        const std::string why = std::string("decode error: ") + e.what();
        abort.payload.assign(why.begin(), why.end());
        flush({abort});
        return false;
      }
      if (!msg) break;
      flush(session.step(*msg));
      if (session.finished()) break;
    }
  }
  return true;
}

InMemoryStats run_in_memory(AliceSession& alice, BobSession& bob, std::vector<Bytes>* wire_log) {
  InMemoryStats stats;
  struct Lane {
    FrameReader reader;
  };
  Lane to_alice;
  Lane to_bob;

  auto send = [&](Lane& lane, const std::vector<ClassicalMessage>& msgs) {
    for (const auto& m : msgs) {
      auto frame = encode(m);
      ++stats.frames;
      stats.bytes += frame.size();
      lane.reader.feed(frame);
      if (wire_log) wire_log->push_back(std::move(frame));
    }
  };

  send(to_bob, alice.begin());
  send(to_alice, bob.begin());
  bool progressed = true;
  while (progressed && !(alice.finished() && bob.finished())) {
    progressed = false;
    while (auto m = to_alice.reader.next()) {
      progressed = true;
      send(to_bob, alice.step(*m));
    }
    while (auto m = to_bob.reader.next()) {
      progressed = true;
      send(to_alice, bob.step(*m));
    }
  }
  return stats;
}

}  // namespace qkdsim::net
