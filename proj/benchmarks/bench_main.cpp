// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "qkdsim/netlink/codec.hpp"
#include "qkdsim/netlink/session.hpp"
#include "qkdsim/photonics.hpp"
#include "qkdsim/rate_model.hpp"
#include "qkdsim/simengine.hpp"

using namespace qkdsim;

static void BM_Predict(benchmark::State& state) {
  rate::SystemParams params;
  params.fiber.length_km = 67.1;
  const rate::DetectorModel det;
  const rate::EveModel eve;
  for (auto _ : state) benchmark::DoNotOptimize(rate::predict(params, det, eve));
}
BENCHMARK(BM_Predict);

static void BM_DetectorGate(benchmark::State& state) {
  photonics::GatedDetector d(photonics::Detector::D1, rate::DetectorModel{}, 0.1, 4e-6);
  Rng rng(1);
  const auto period = photonics::from_seconds(2e-7);
  photonics::SimTime t{0};
  std::uint32_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(d.gate(++k % 64 == 0 ? 1 : 0, t, rng));
    t += period;
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorGate);

static void BM_CodecRoundTrip(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  net::BitsPayload bits;
  bits.bits.resize(n);
  for (auto& b : bits.bits) b = random_bit(rng);
  const net::ClassicalMessage msg{net::MessageType::SampleBits, {}, net::encode_bits(bits)};
  for (auto _ : state) {
    const auto frame = net::encode(msg);
    benchmark::DoNotOptimize(net::decode(frame));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(msg.payload.size()));
}
BENCHMARK(BM_CodecRoundTrip)->Arg(64)->Arg(4096)->Arg(65536);

static void BM_Exchange(benchmark::State& state) {
  sim::RunConfig c;
  c.params.fiber.length_km = 22.0;
  c.params.fiber.loss_coeff_db_per_km = 0.0;
  c.params.fiber.extra_loss_db = 4.8;
  c.n_pulses_total = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sim::simulate(c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Exchange)->Arg(100'000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
