#pragma once

#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace hbsim {

// Sub-vector statistics for distributed LayerNorm (mean, population variance)
// and RMSNorm (sum of squares).
template <std::floating_point T>
struct NormStats {
  std::uint64_t n = 0;
  T mean{0};
  T var{0};
  T sq_sum{0};

  static NormStats of(std::span<const T> x) {
    if (x.empty()) throw std::invalid_argument("NormStats::of: empty input");
    NormStats s;
    s.n = x.size();
    T sum{0};
    for (T v : x) {
      sum += v;
      s.sq_sum += v * v;
    }
    s.mean = sum / static_cast<T>(s.n);
    T acc{0};
    for (T v : x) acc += (v - s.mean) * (v - s.mean);
    s.var = acc / static_cast<T>(s.n);
    return s;
  }
};

// Pairwise merge: weighted mean, within-group variance plus between-group term.
template <std::floating_point T>
NormStats<T> merge_norm_stats(const NormStats<T>& a, const NormStats<T>& b) {
  if (a.n == 0 || b.n == 0) throw std::invalid_argument("merge_norm_stats: empty operand");
  const T n1 = static_cast<T>(a.n);
  const T n2 = static_cast<T>(b.n);
  const T n = n1 + n2;
  const T delta = a.mean - b.mean;
  NormStats<T> out;
  out.n = a.n + b.n;
  out.mean = (n1 * a.mean + n2 * b.mean) / n;
  out.var = (n1 * a.var + n2 * b.var) / n + n1 * n2 * delta * delta / (n * n);
  out.sq_sum = a.sq_sum + b.sq_sum;
  return out;
}

}  // namespace hbsim
