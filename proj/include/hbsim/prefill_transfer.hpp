#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hbsim {

// Piecewise-constant view of one PE: `arrival` units of prompt KV land in the
// transfer buffer each cycle, `slack` units per cycle of DRAM bandwidth are
// idle. Units are arbitrary integers (callers scale bytes as needed).
struct TransferSegment {
  std::uint64_t cycles = 0;
  std::uint64_t arrival = 0;
  std::uint64_t slack = 0;
};

struct TransferConfig {
  std::uint64_t buffer = 0;      // transfer buffer capacity
  std::uint64_t bandwidth = 1;   // DRAM write rate during a burst, units/cycle
  std::uint64_t setup = 0;       // cycles per burst
  double min_fraction = 0.125;   // threshold floor as a fraction of the buffer

  void validate() const {
    if (buffer == 0) throw std::invalid_argument("transfer: buffer must be > 0");
    if (bandwidth == 0) throw std::invalid_argument("transfer: bandwidth must be > 0");
    if (!(min_fraction > 0 && min_fraction <= 1)) throw std::invalid_argument("transfer: min_fraction in (0,1]");
  }
};

struct TransferResult {
  std::uint64_t stall_cycles = 0;  // non-overlapped cycles charged to the PE
  std::uint64_t bursts = 0;
  std::uint64_t forced_bursts = 0;  // buffer full, arrivals back-pressured
  std::uint64_t arrived = 0;
  std::uint64_t fine_drained = 0;   // written through idle bandwidth
  std::uint64_t burst_written = 0;
  std::uint64_t pending = 0;        // left in the buffer (0 after a flush)
  std::uint64_t cycles = 0;

  friend bool operator==(const TransferResult&, const TransferResult&) = default;
};

// Accumulation threshold: grows with DRAM utilisation and with arrival
// pressure, never below min_fraction of the buffer.
inline std::uint64_t burst_threshold(const TransferSegment& s, const TransferConfig& c) {
  const double bw = static_cast<double>(c.bandwidth);
  const double util = std::clamp(1.0 - static_cast<double>(s.slack) / bw, 0.0, 1.0);
  const double rho = std::clamp(static_cast<double>(s.arrival) / bw, 0.0, 1.0);
  const double f = c.min_fraction + (1.0 - c.min_fraction) * std::max(util, rho);
  const auto t = static_cast<std::uint64_t>(std::floor(static_cast<double>(c.buffer) * f));
  return std::max<std::uint64_t>(1, std::min(t, c.buffer));
}

namespace detail {

inline std::uint64_t burst_stall(std::uint64_t q, const TransferConfig& c) {
  return (q + c.bandwidth - 1) / c.bandwidth + c.setup;
}

struct NextBurst {
  bool found = false;
  std::uint64_t at = 0;      // cycles consumed including the burst cycle
  std::uint64_t bytes = 0;   // burst size
  bool forced = false;
  std::uint64_t q_end = 0;   // buffer after `n` cycles when no burst
};

// First burst within n cycles starting from buffer level q.
inline NextBurst next_burst(std::uint64_t q, std::uint64_t n, std::uint64_t a, std::uint64_t r, std::uint64_t theta,
                            std::uint64_t cap) {
  NextBurst nb;
  if (n == 0) {
    nb.q_end = q;
    return nb;
  }
  if (a <= r) {
    // Level never rises; only the first cycle can burst.
    const std::uint64_t in = q + a;
    if (in > cap) return {true, 1, in, true, 0};
    const std::uint64_t q1 = in - std::min(in, r);
    if (q1 > 0 && q1 >= theta) return {true, 1, q1, false, 0};
    const std::uint64_t fall = r - a;
    nb.q_end = (fall == 0 || q1 / fall >= n - 1) ? q1 - fall * (n - 1) : 0;
    return nb;
  }
  // Level rises by d per cycle: q_k = q + k d.
  const std::uint64_t d = a - r;
  std::uint64_t k_thr = q >= theta ? 1 : (theta - q + d - 1) / d;
  k_thr = std::max<std::uint64_t>(k_thr, 1);
  // Forced at cycle k when q + (k-1) d + a > cap.
  std::uint64_t k_forced;
  if (q + a > cap) k_forced = 1;
  else k_forced = (cap - a - q) / d + 2;
  const std::uint64_t k = std::min(k_thr, k_forced);
  if (k > n) {
    nb.q_end = q + n * d;
    return nb;
  }
  nb.found = true;
  nb.at = k;
  if (k_forced <= k_thr) {
    nb.forced = true;
    nb.bytes = q + (k - 1) * d + a;
  } else {
    nb.bytes = q + k * d;
  }
  return nb;
}

}  // namespace detail

// Event-driven schedule: jumps between bursts analytically and repeats the
// steady burst period in bulk.
inline TransferResult prefill_transfer_schedule(const std::vector<TransferSegment>& trace, const TransferConfig& cfg,
                                                std::uint64_t initial = 0, bool flush = true) {
  cfg.validate();
  TransferResult res;
  std::uint64_t q = initial;
  auto burst = [&](std::uint64_t bytes, bool forced) {
    res.stall_cycles += detail::burst_stall(bytes, cfg);
    res.burst_written += bytes;
    ++res.bursts;
    if (forced) ++res.forced_bursts;
  };
  for (const auto& s : trace) {
    const std::uint64_t theta = burst_threshold(s, cfg);
    const std::uint64_t a = s.arrival, r = s.slack, cap = cfg.buffer;
    res.arrived += a * s.cycles;
    res.cycles += s.cycles;
    std::uint64_t left = s.cycles;
    while (left > 0) {
      auto nb = detail::next_burst(q, left, a, r, theta, cap);
      if (!nb.found) {
        q = nb.q_end;
        break;
      }
      burst(nb.bytes, nb.forced);
      left -= nb.at;
      q = 0;
      if (left == 0) break;
      // From an empty buffer the pattern repeats with a fixed period.
      auto period = detail::next_burst(0, left, a, r, theta, cap);
      if (!period.found) {
        q = period.q_end;
        break;
      }
      const std::uint64_t reps = left / period.at;
      res.stall_cycles += reps * detail::burst_stall(period.bytes, cfg);
      res.burst_written += reps * period.bytes;
      res.bursts += reps;
      if (period.forced) res.forced_bursts += reps;
      left -= reps * period.at;
    }
  }
  if (flush && q > 0) {
    burst(q, false);
    q = 0;
  }
  res.pending = q;
  res.fine_drained = res.arrived + initial - res.burst_written - res.pending;
  return res;
}

// Non-overlapped share of a busy interval.
inline double non_overlapped_fraction(const TransferResult& r, double busy_cycles) {
  if (busy_cycles <= 0) return 0.0;
  return static_cast<double>(r.stall_cycles) / (busy_cycles + static_cast<double>(r.stall_cycles));
}

}  // namespace hbsim
