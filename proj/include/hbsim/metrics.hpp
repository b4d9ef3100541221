#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace hbsim {

// (max - min) per-unit usage over one unit's capacity.
inline double fragmentation_ratio(const std::vector<std::uint64_t>& used, std::uint64_t unit_capacity) {
  if (used.empty()) return 0.0;
  if (unit_capacity == 0) throw std::invalid_argument("fragmentation_ratio: zero capacity");
  auto [lo, hi] = std::minmax_element(used.begin(), used.end());
  return static_cast<double>(*hi - *lo) / static_cast<double>(unit_capacity);
}

inline double waste_ratio(std::uint64_t reserved, std::uint64_t used) {
  if (reserved == 0) return 0.0;
  if (used > reserved) throw std::invalid_argument("waste_ratio: used exceeds reserved");
  return static_cast<double>(reserved - used) / static_cast<double>(reserved);
}

// (max - min) per-unit attention latency over the summed latency.
inline double imbalance_ratio(const std::vector<double>& latencies) {
  if (latencies.empty()) return 0.0;
  for (double v : latencies)
    if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("imbalance_ratio: latency must be finite and >= 0");
  const double total = std::accumulate(latencies.begin(), latencies.end(), 0.0);
  if (total == 0.0) return 0.0;
  auto [lo, hi] = std::minmax_element(latencies.begin(), latencies.end());
  return (*hi - *lo) / total;
}

// Nearest-rank percentile, p in (0, 100].
inline double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw std::invalid_argument("percentile: no samples");
  if (!(p > 0 && p <= 100)) throw std::invalid_argument("percentile: p must be in (0, 100]");
  std::sort(samples.begin(), samples.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

}  // namespace hbsim
