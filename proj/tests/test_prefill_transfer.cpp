#include <catch_amalgamated.hpp>

#include <random>

#include "hbsim/prefill_transfer.hpp"
#include "ref_prefill.hpp"

using namespace hbsim;
using namespace hbsim::testing;

namespace {

TransferConfig config(std::uint64_t buffer, std::uint64_t bw, std::uint64_t setup) {
  TransferConfig c;
  c.buffer = buffer;
  c.bandwidth = bw;
  c.setup = setup;
  return c;
}

}  // namespace

TEST_CASE("compute-bound PE absorbs arrivals in idle bandwidth", "[prefill]") {
  auto c = config(4096, 64, 16);
  std::vector<TransferSegment> t{{10000, 20, 64}, {5000, 64, 64}};
  auto r = prefill_transfer_schedule(t, c);
  CHECK(r.stall_cycles == 0);
  CHECK(r.bursts == 0);
  CHECK(r.fine_drained == r.arrived);
}

TEST_CASE("memory-bound PE pays the full write time", "[prefill]") {
  // No slack, no setup, bursts sized in whole bandwidth units.
  auto c = config(4096, 64, 0);
  c.min_fraction = 1.0;
  std::vector<TransferSegment> t{{1024, 32, 0}};
  auto r = prefill_transfer_schedule(t, c);
  CHECK(r.arrived == 32768);
  CHECK(r.stall_cycles == 32768 / 64);
  CHECK(r.fine_drained == 0);
  // With setup every burst adds its fixed cost.
  c.setup = 10;
  auto s = prefill_transfer_schedule(t, c);
  CHECK(s.stall_cycles == 32768 / 64 + 10 * s.bursts);
}

TEST_CASE("threshold adapts to utilisation and arrival rate", "[prefill]") {
  auto c = config(1000, 100, 0);
  CHECK(burst_threshold({1, 0, 100}, c) == 125);
  CHECK(burst_threshold({1, 0, 0}, c) == 1000);
  CHECK(burst_threshold({1, 50, 100}, c) == 562);
  CHECK(burst_threshold({1, 10, 50}, c) == 562);
}

TEST_CASE("overflow back-pressures with a forced burst", "[prefill]") {
  auto c = config(100, 10, 2);
  std::vector<TransferSegment> t{{5, 150, 0}};
  auto r = prefill_transfer_schedule(t, c);
  CHECK(r.forced_bursts == 5);
  CHECK(r.stall_cycles == 5 * (15 + 2));
}

TEST_CASE("event schedule matches per-cycle replay", "[prefill][oracle]") {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int i = 0; i < 600; ++i) {
    const std::uint64_t bw = std::uniform_int_distribution<std::uint64_t>(1, 128)(rng);
    auto c = config(std::uniform_int_distribution<std::uint64_t>(1, 5000)(rng), bw,
                    std::uniform_int_distribution<std::uint64_t>(0, 20)(rng));
    c.min_fraction = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    auto t = random_trace(rng, bw);
    const std::uint64_t q0 = std::uniform_int_distribution<std::uint64_t>(0, c.buffer)(rng);
    const bool flush = (i % 3) != 0;
    auto fast = prefill_transfer_schedule(t, c, q0, flush);
    auto ref = replay_per_cycle(t, c, q0, flush);
    INFO("trace " << i);
    CHECK(fast == ref);
    ++checked;
  }
  CHECK(checked >= 500);
}

TEST_CASE("non-overlapped fraction", "[prefill]") {
  TransferResult r;
  r.stall_cycles = 25;
  CHECK(non_overlapped_fraction(r, 975) == 0.025);
  CHECK(non_overlapped_fraction(r, 0) == 0.0);
  CHECK_THROWS_AS(prefill_transfer_schedule({}, config(0, 1, 0)), std::invalid_argument);
}
