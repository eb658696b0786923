// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <functional>
#include <thread>

#include "qkdsim/errors.hpp"
#include "qkdsim/netlink/codec.hpp"
#include "qkdsim/netlink/session.hpp"
#include "qkdsim/netlink/transport.hpp"

using namespace qkdsim;
using namespace qkdsim::net;

namespace {

SessionId sid(std::uint8_t seed) {
  SessionId id{};
  for (std::size_t i = 0; i < id.size(); ++i) id[i] = static_cast<std::uint8_t>(seed + 17 * i);
  return id;
}

sim::RunConfig small_run(std::uint64_t pulses, std::uint64_t seed = 5) {
  sim::RunConfig c;
  c.params.fiber.length_km = 22.0;
  c.params.fiber.loss_coeff_db_per_km = 0.0;
  c.params.fiber.extra_loss_db = 4.8;
  c.n_pulses_total = pulses;
  c.seed = seed;
  return c;
}

struct Addressed {
  Role to;
  ClassicalMessage msg;
};

// Delivers frames between two sessions. The hook may rewrite or drop a
// frame (return false to drop) and queue extra frames.
void pump(AliceSession& alice, BobSession& bob,
          const std::function<bool(Addressed&, std::deque<Addressed>&)>& hook = {}) {
  std::deque<Addressed> q;
  for (auto& m : alice.begin()) q.push_back({Role::Bob, std::move(m)});
  for (auto& m : bob.begin()) q.push_back({Role::Alice, std::move(m)});
  std::size_t guard = 0;
  while (!q.empty() && ++guard < 1'000'000) {
    Addressed a = std::move(q.front());
    q.pop_front();
    if (hook && !hook(a, q)) continue;
    Session& target = a.to == Role::Alice ? static_cast<Session&>(alice) : static_cast<Session&>(bob);
    const Role reply_to = a.to == Role::Alice ? Role::Bob : Role::Alice;
    for (auto& m : target.step(a.msg)) q.push_back({reply_to, std::move(m)});
  }
}

bool contains(const Bytes& hay, const Bytes& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST_CASE("frame layout") {
  const ClassicalMessage hello{MessageType::Hello, sid(1), {}};
  const auto frame = encode(hello);
  REQUIRE(frame.size() == 15);
  CHECK(frame[0] == 0x51);
  CHECK(frame[1] == 0x4B);
  CHECK(frame[2] == 1);
  CHECK(frame[3] == 1);
  CHECK(std::equal(hello.session_id.begin(), hello.session_id.end(), frame.begin() + 4));
  CHECK(frame[12] == 0);
  CHECK(frame[14] == 0);
  CHECK(decode(frame) == hello);

  ClassicalMessage big{MessageType::Params, sid(2), Bytes(0x012345, 0xAB)};
  const auto f2 = encode(big);
  CHECK(f2[12] == 0x01);
  CHECK(f2[13] == 0x23);
  CHECK(f2[14] == 0x45);
  CHECK(decode(f2) == big);

  ClassicalMessage huge{MessageType::Params, sid(2), Bytes(kMaxPayload + 1, 0)};
  CHECK_THROWS_AS(encode(huge), std::length_error);
}

TEST_CASE("basis reveal round trip") {
  Rng rng(8);
  BitsPayload p{42, {}};
  for (int i = 0; i < 1000; ++i) p.bits.push_back(random_bit(rng));
  const ClassicalMessage m{MessageType::BasisReveal, sid(3), encode_bits(p)};
  const auto back = decode(encode(m));
  CHECK(back == m);
  const auto bits = decode_bits(back.payload);
  CHECK(bits.block == 42);
  CHECK(bits.bits == p.bits);
  CHECK(m.payload.size() == 8 + 4 + 125);
}

TEST_CASE("typed payload round trips") {
  SimQPayload s{7, {0, 1, 2, 3, 3, 2, 1}};
  const auto s2 = decode_simq(encode_simq(s));
  CHECK(s2.block == 7);
  CHECK(s2.quarter_turns == s.quarter_turns);

  ClickReportPayload c{9, {0, 1, 5, 400, 100000}};
  CHECK(decode_click_report(encode_click_report(c)).pulses == c.pulses);
  CHECK(decode_block(encode_block(1ULL << 40)) == (1ULL << 40));
  const std::vector<PulseIndex> idx{3, 4, 1000, 1ULL << 50};
  CHECK(decode_index_list(encode_index_list(idx)) == idx);
  const auto q = decode_qber_report(encode_qber_report({20, 100}));
  CHECK(q.errors == 20);
  CHECK(q.sample_size == 100);

  CHECK_THROWS(decode_qber_report(Bytes{1, 2, 3}));
  const std::vector<PulseIndex> unsorted{5, 5};
  CHECK_THROWS(encode_index_list(unsorted));

  std::vector<std::uint8_t> bits{1, 0, 1, 1, 0, 0, 0, 1, 1};
  CHECK(unpack_bits(pack_bits(bits), bits.size()) == bits);
  CHECK_THROWS(unpack_bits(pack_bits(bits), 17));
}

TEST_CASE("decode errors are distinct") {
  const auto good = encode(ClassicalMessage{MessageType::SampleRequest, sid(4), Bytes{1, 2, 3, 4}});

  auto status_of = [](Bytes b) { return try_decode(b).status; };
  CHECK(status_of(good) == DecodeStatus::Ok);
  CHECK(try_decode(good).consumed == good.size());

  Bytes truncated(good.begin(), good.end() - 1);
  const auto r = try_decode(truncated);
  CHECK(r.status == DecodeStatus::Incomplete);
  CHECK_FALSE(r.message.has_value());
  CHECK(r.consumed == 0);

  Bytes bad_magic = good;
  bad_magic[0] = 0x52;
  CHECK(status_of(bad_magic) == DecodeStatus::BadMagic);
  Bytes bad_version = good;
  bad_version[2] = 2;
  CHECK(status_of(bad_version) == DecodeStatus::BadVersion);
  Bytes bad_type = good;
  bad_type[3] = 0;
  CHECK(status_of(bad_type) == DecodeStatus::UnknownType);
  bad_type[3] = 14;
  CHECK(status_of(bad_type) == DecodeStatus::UnknownType);

  try {
    decode(truncated);
    FAIL("expected a decode error");
  } catch (const DecodeError& e) {
    CHECK(e.status() == DecodeStatus::Incomplete);
  }
  Bytes trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode(trailing), DecodeError);
}

TEST_CASE("decode is total over mutated frames") {
  Rng rng(12);
  std::vector<Bytes> seeds;
  for (std::uint8_t t = 1; t <= 13; ++t) {
    Bytes payload(rng() % 64);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    seeds.push_back(encode(ClassicalMessage{static_cast<MessageType>(t), sid(t), payload}));
  }
  std::size_t ok = 0;
  std::size_t rejected = 0;
  for (int i = 0; i < 200000; ++i) {
    Bytes f = seeds[rng() % seeds.size()];
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits; ++e) {
      switch (rng() % 4) {
        case 0: f[rng() % f.size()] = static_cast<std::uint8_t>(rng()); break;
        case 1: f.resize(rng() % (f.size() + 1)); break;
        case 2: f.push_back(static_cast<std::uint8_t>(rng())); break;
        default: f[rng() % f.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
      }
      if (f.empty()) f.push_back(0x51);
    }
    DecodeResult r;
    CHECK_NOTHROW(r = try_decode(f));
    if (r.status == DecodeStatus::Ok) {
      REQUIRE(r.message.has_value());
      CHECK(r.consumed <= f.size());
      CHECK(r.consumed == kHeaderSize + r.message->payload.size());
      CHECK(encode(*r.message) == Bytes(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(r.consumed)));
      ++ok;
    } else {
      CHECK_FALSE(r.message.has_value());
      ++rejected;
    }
    // Payload decoders either parse or throw a library error.
    try {
      (void)decode_click_report(f);
    } catch (const DecodeError&) {
    } catch (const ValidationError&) {
    }
  }
  CHECK(ok > 0);
  CHECK(rejected > 0);
}

TEST_CASE("frame reader reassembles chunked streams") {
  Rng rng(13);
  std::vector<ClassicalMessage> sent;
  Bytes stream;
  for (int i = 0; i < 300; ++i) {
    Bytes payload(rng() % 3000);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    sent.push_back({static_cast<MessageType>(1 + rng() % 13), sid(static_cast<std::uint8_t>(i)), payload});
    encode_into(sent.back(), stream);
  }
  FrameReader reader;
  std::vector<ClassicalMessage> got;
  for (std::size_t pos = 0; pos < stream.size();) {
    const std::size_t n = std::min<std::size_t>(1 + rng() % 700, stream.size() - pos);
    reader.feed(std::span(stream).subspan(pos, n));
    pos += n;
    while (auto m = reader.next()) got.push_back(std::move(*m));
  }
  CHECK(got == sent);
  CHECK(reader.buffered() == 0);

  FrameReader bad;
  const Bytes junk{0x00, 0x01, 0x02};
  bad.feed(junk);
  CHECK_THROWS_AS(bad.next(), DecodeError);
}

TEST_CASE("payload reader bounds") {
  const Bytes three{1, 2, 3};
  PayloadReader r(three);
  CHECK_THROWS_AS(r.u32(), DecodeError);
  PayloadWriter w;
  w.varint(0).varint(127).varint(128).varint(~0ULL);
  const auto b = w.take();
  PayloadReader v(b);
  CHECK(v.varint() == 0);
  CHECK(v.varint() == 127);
  CHECK(v.varint() == 128);
  CHECK(v.varint() == ~0ULL);
  CHECK_NOTHROW(v.expect_done());
  const Bytes overlong(11, 0xFF);
  PayloadReader o(overlong);
  CHECK_THROWS_AS(o.varint(), DecodeError);
}

TEST_CASE("honest session matches the single-process run") {
  const auto cfg = small_run(200'000);
  AliceSession alice;
  BobSession bob(cfg);
  std::vector<Bytes> wire;
  const auto stats = run_in_memory(alice, bob, &wire);
  REQUIRE(alice.phase() == SessionPhase::Done);
  REQUIRE(bob.phase() == SessionPhase::Done);
  CHECK(stats.frames == wire.size());

  const auto ref = sim::simulate(cfg);
  REQUIRE(ref.status == sim::ExchangeStatus::Completed);
  CHECK(bob.outcome().sifted_indices == ref.sifted.indices);
  CHECK(alice.outcome().sifted_indices == ref.sifted.indices);
  CHECK(alice.outcome().sifted_bits == ref.sifted.alice_bits);
  CHECK(bob.outcome().sifted_bits == ref.sifted.bob_bits);
  CHECK(alice.outcome().key_indices == ref.key.indices);
  CHECK(alice.outcome().key_bits == ref.key.alice_bits);
  CHECK(bob.outcome().key_bits == ref.key.bob_bits);
  for (const auto* s : {&alice.outcome(), &bob.outcome()}) {
    CHECK(s->estimate.errors == ref.estimate.errors);
    CHECK(s->estimate.sample_size == ref.estimate.sample_size);
    CHECK(s->estimate.d_hat == ref.estimate.d_hat);
    CHECK(s->estimate.disclosed_indices == ref.estimate.disclosed_indices);
  }

  CHECK(alice.transcript().combined() == bob.transcript().combined());
  CHECK(alice.transcript().alice_to_bob() == bob.transcript().alice_to_bob());
  CHECK(alice.session_id() == bob.session_id());

  // Phases only move forward, except that sifting hands back to the next train.
  for (const Session* s : {static_cast<const Session*>(&alice), static_cast<const Session*>(&bob)}) {
    const auto& h = s->phase_history();
    REQUIRE(h.size() >= 2);
    CHECK(h.front() == SessionPhase::Init);
    CHECK(h.back() == SessionPhase::Done);
    for (std::size_t i = 1; i < h.size(); ++i) {
      const bool forward = h[i] >= h[i - 1];
      const bool next_train = h[i - 1] == SessionPhase::Sifting && h[i] == SessionPhase::Exchanging;
      CHECK((forward || next_train));
    }
  }
}

TEST_CASE("no key material on the wire") {
  const auto cfg = small_run(600'000, 9);
  AliceSession alice;
  BobSession bob(cfg);
  std::vector<Bytes> wire;
  run_in_memory(alice, bob, &wire);
  REQUIRE(alice.phase() == SessionPhase::Done);
  const auto& key = alice.outcome().key_bits;
  REQUIRE(key.size() >= 1000);

  Bytes classical;
  for (const auto& f : wire) {
    if (decode(f).type != MessageType::SimQ) classical.insert(classical.end(), f.begin(), f.end());
  }
  // Any 128-bit stretch of the key, packed at any bit offset, or as raw 0/1 bytes.
  for (std::size_t start = 0; start + 128 <= key.size(); start += 97) {
    const std::span<const std::uint8_t> window(key.data() + start, 128);
    for (std::size_t shift = 0; shift < 8; ++shift) {
      std::vector<std::uint8_t> bits(window.begin() + static_cast<std::ptrdiff_t>(shift), window.end());
      auto packed = pack_bits(bits);
      packed.pop_back();
      CHECK_FALSE(contains(classical, packed));
    }
    CHECK_FALSE(contains(classical, Bytes(window.begin(), window.end())));
  }
}

TEST_CASE("out-of-order SAMPLE_BITS aborts") {
  AliceSession alice;
  BobSession bob(small_run(20'000));
  bool injected = false;
  pump(alice, bob, [&](Addressed& a, std::deque<Addressed>& q) {
    if (!injected && a.to == Role::Bob && a.msg.type == MessageType::TrainDone) {
      injected = true;
      q.push_front({Role::Alice, {MessageType::SampleBits, a.msg.session_id, encode_bits({0, {1, 0}})}});
    }
    return true;
  });
  CHECK(injected);
  CHECK(alice.phase() == SessionPhase::Aborted);
  CHECK(alice.abort_kind() == AbortKind::Protocol);
  CHECK(bob.phase() == SessionPhase::Aborted);
  CHECK(bob.abort_kind() == AbortKind::Peer);
  CHECK(alice.outcome().key_bits.empty());
  CHECK(bob.outcome().key_bits.empty());
}

TEST_CASE("injected high QBER report aborts both sides") {
  AliceSession alice;
  BobSession bob(small_run(100'000));
  bool injected = false;
  pump(alice, bob, [&](Addressed& a, std::deque<Addressed>&) {
    if (a.to == Role::Alice && a.msg.type == MessageType::SampleBits) {
      // Eve answers in Alice's place.
      injected = true;
      const auto n = static_cast<std::uint32_t>(decode_bits(a.msg.payload).bits.size());
      a = {Role::Bob, {MessageType::QberReport, a.msg.session_id, encode_qber_report({n / 5, n})}};
    }
    return true;
  });
  REQUIRE(injected);
  CHECK(bob.phase() == SessionPhase::Aborted);
  CHECK(bob.abort_kind() == AbortKind::Qber);
  CHECK(alice.phase() == SessionPhase::Aborted);
  CHECK(alice.abort_kind() == AbortKind::Peer);
  CHECK(alice.outcome().key_bits.empty());
  CHECK(bob.outcome().key_bits.empty());
}

TEST_CASE("abort paths through the session") {
  SUBCASE("QBER above threshold") {
    auto cfg = small_run(100'000);
    cfg.params.qber_opt = 0.25;
    AliceSession alice;
    BobSession bob(cfg);
    run_in_memory(alice, bob);
    CHECK(alice.abort_kind() == AbortKind::Qber);
    CHECK(bob.abort_kind() == AbortKind::Qber);
    CHECK(alice.outcome().key_bits.empty());
    CHECK(bob.outcome().key_bits.empty());
  }
  SUBCASE("trojan light at Alice") {
    auto cfg = small_run(100'000);
    cfg.power.trojan_extra = 1.0;
    AliceSession alice;
    BobSession bob(cfg);
    run_in_memory(alice, bob);
    CHECK(alice.abort_kind() == AbortKind::Security);
    CHECK(bob.abort_kind() == AbortKind::Security);
    CHECK(bob.outcome().key_bits.empty());
  }
  SUBCASE("calibration window missed") {
    auto cfg = small_run(10'000);
    cfg.calibration_guess_km = 30.0;
    AliceSession alice;
    BobSession bob(cfg);
    run_in_memory(alice, bob);
    CHECK(bob.abort_kind() == AbortKind::Calibration);
    CHECK(alice.abort_kind() == AbortKind::Peer);
  }
  SUBCASE("session id mismatch") {
    AliceSession alice;
    BobSession bob(small_run(10'000));
    bool changed = false;
    pump(alice, bob, [&](Addressed& a, std::deque<Addressed>&) {
      if (!changed && a.to == Role::Alice && a.msg.type == MessageType::Params) {
        changed = true;
        a.msg.session_id[0] ^= 1;
      }
      return true;
    });
    CHECK(alice.abort_kind() == AbortKind::Protocol);
  }
  SUBCASE("tampered parameter echo") {
    AliceSession alice;
    BobSession bob(small_run(10'000));
    pump(alice, bob, [&](Addressed& a, std::deque<Addressed>&) {
      if (a.to == Role::Bob && a.msg.type == MessageType::Params) a.msg.payload.push_back('\n');
      return true;
    });
    CHECK(bob.abort_kind() == AbortKind::Validation);
  }
}

TEST_CASE("sessions survive arbitrary input") {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    AliceSession alice;
    BobSession bob(small_run(5'000));
    std::size_t delivered = 0;
    const std::size_t poison_at = rng() % 12;
    pump(alice, bob, [&](Addressed& a, std::deque<Addressed>&) {
      if (delivered++ == poison_at) {
        a.msg.type = static_cast<MessageType>(1 + rng() % 13);
        a.msg.payload.resize(rng() % 40);
        for (auto& b : a.msg.payload) b = static_cast<std::uint8_t>(rng());
      }
      return true;
    });
    // A forged ABORT ends only the receiver; the sender then waits on a
    // transport that would close under it.
    CHECK((alice.finished() || bob.finished()));
    if (alice.phase() == SessionPhase::Aborted) CHECK(alice.outcome().key_bits.empty());
    if (bob.phase() == SessionPhase::Aborted) CHECK(bob.outcome().key_bits.empty());
  }
}

TEST_CASE("endpoints") {
  CHECK(parse_endpoint("10.0.0.2:9000").host == "10.0.0.2");
  CHECK(parse_endpoint("10.0.0.2:9000").port == 9000);
  CHECK(parse_endpoint("example").port == kDefaultPort);
  CHECK(parse_endpoint(":1234").host == "127.0.0.1");
  CHECK(parse_endpoint(":1234").port == 1234);
  CHECK_THROWS(parse_endpoint("host:99999"));
  CHECK_THROWS(parse_endpoint("host:abc"));

  ::setenv(kBindEnvVar, "0.0.0.0:4555", 1);
  CHECK(listen_endpoint({"127.0.0.1", 1}).port == 4555);
  CHECK(listen_endpoint({"127.0.0.1", 1}).host == "0.0.0.0");
  ::unsetenv(kBindEnvVar);
  CHECK(listen_endpoint({"127.0.0.1", 1}).port == 1);
}

TEST_CASE("session over a socket pair and over TCP") {
  const auto cfg = small_run(100'000, 4);
  const auto ref = sim::simulate(cfg);

  {
    auto [a_end, b_end] = socket_pair();
    AliceSession alice;
    bool alice_ok = false;
    std::thread t([&, s = std::move(a_end)]() mutable { alice_ok = run_endpoint(alice, s); });
    BobSession bob(cfg);
    const bool bob_ok = run_endpoint(bob, b_end);
    t.join();
    CHECK(alice_ok);
    CHECK(bob_ok);
    CHECK(bob.outcome().key_bits == ref.key.bob_bits);
    CHECK(alice.outcome().key_bits == ref.key.alice_bits);
  }

  {
    TcpListener listener({"127.0.0.1", 0});
    REQUIRE(listener.port() != 0);
    AliceSession alice;
    std::thread t([&] {
      auto s = listener.accept_one();
      run_endpoint(alice, s);
    });
    auto s = tcp_connect({"127.0.0.1", listener.port()}, 5.0);
    BobSession bob(cfg);
    run_endpoint(bob, s);
    t.join();
    CHECK(bob.phase() == SessionPhase::Done);
    CHECK(alice.outcome().sifted_indices == ref.sifted.indices);
    CHECK(alice.transcript().combined() == bob.transcript().combined());
  }
}
