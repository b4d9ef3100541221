#pragma once

// Oracle-equivalence suites for the attention numerics, runnable outside the
// unit tests. A named fault swaps one suite's kernel for a broken variant so
// the harness itself can be checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/attention.hpp"
#include "hbsim/mla.hpp"
#include "hbsim/norm_stats.hpp"
#include "hbsim/tensor.hpp"

namespace hbsim {

struct SuiteResult {
  std::string name;
  std::uint64_t cases = 0;
  double max_error = 0;
  double tolerance = 0;
  bool passed = false;
  std::string note;
};

struct NumericsOptions {
  std::uint64_t seed = 1;
  double case_scale = 1.0;                 // multiplies every suite's case count
  std::map<std::string, double> tolerance;  // per-suite override
  std::string fault;                        // suite to break; empty = build default, "none" = nothing
};

#ifdef HBSIM_FORCE_NUMERICS_BUG
inline constexpr const char* kDefaultNumericsFault = "tiled_attention_oracle";
#else
inline constexpr const char* kDefaultNumericsFault = "";
#endif

namespace numerics_detail {

using Rng = std::mt19937_64;

template <std::floating_point T>
Vec<T> rand_vec(Rng& rng, std::size_t n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Vec<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <std::floating_point T>
Matrix<T> rand_mat(Rng& rng, std::size_t r, std::size_t c, double scale) {
  return Matrix<T>(r, c, rand_vec<T>(rng, r * c, scale));
}

inline std::vector<std::size_t> rand_partition(Rng& rng, std::size_t total, std::size_t max_part) {
  std::vector<std::size_t> parts;
  while (total > 0) {
    parts.push_back(std::uniform_int_distribution<std::size_t>(1, std::min(total, max_part))(rng));
    total -= parts.back();
  }
  return parts;
}

inline std::uint64_t scaled(std::uint64_t n, double s) {
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(static_cast<double>(n) * s)));
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline double rel(double got, double ref) { return std::abs(got - ref) / std::max(1.0, std::abs(ref)); }

// Tiled loop that forgets to rescale the running output.
template <std::floating_point T>
AttnPartial<T> tiled_no_rescale(std::span<const T> q, std::span<const KvBlock<T>> blocks) {
  auto st = AttnPartial<T>::empty(blocks.front().values.cols());
  for (const auto& b : blocks) {
    Vec<T> logits(b.keys.rows());
    for (std::size_t r = 0; r < logits.size(); ++r) logits[r] = static_cast<T>(dot(q, b.keys.row(r)));
    auto step = online_softmax_step<T>(logits, st);
    for (std::size_t r = 0; r < logits.size(); ++r)
      for (std::size_t c = 0; c < st.out.size(); ++c) st.out[c] += step.probs[r] * b.values(r, c);
    st.max = step.max;
    st.denom = step.denom;
  }
  return st;
}

template <std::floating_point T>
AttnPartial<T> combine_equal_weights(const AttnPartial<T>& a, const AttnPartial<T>& b) {
  if (a.is_empty()) return b;
  if (b.is_empty()) return a;
  AttnPartial<T> out{Vec<T>(a.dim()), std::max(a.max, b.max), a.denom + b.denom};
  for (std::size_t i = 0; i < out.out.size(); ++i) out.out[i] = T(0.5) * (a.out[i] + b.out[i]);
  return out;
}

inline std::vector<double> direct_softmax(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s += (out[i] = std::exp(x[i] - m));
  for (auto& v : out) v /= s;
  return out;
}

}  // namespace numerics_detail

class NumericsValidator {
 public:
  explicit NumericsValidator(NumericsOptions opt) : opt_(std::move(opt)) {
    if (!(opt_.case_scale > 0)) throw std::invalid_argument("numerics: case_scale must be > 0");
    if (!opt_.fault.empty() && opt_.fault != "none") {
      const auto names = suite_names();
      if (std::find(names.begin(), names.end(), opt_.fault) == names.end())
        throw std::invalid_argument("numerics: unknown fault target " + opt_.fault);
    }
    for (const auto& [k, v] : opt_.tolerance) {
      const auto names = suite_names();
      if (std::find(names.begin(), names.end(), k) == names.end())
        throw std::invalid_argument("numerics: unknown suite " + k);
      if (!(v > 0)) throw std::invalid_argument("numerics: tolerance must be > 0");
    }
  }

  static std::vector<std::string> suite_names() {
    return {"tiled_attention_oracle", "partition_invariance", "combine_order", "online_softmax",
            "layernorm_merge",        "rmsnorm_merge",        "mla_absorption"};
  }

  static double default_tolerance(const std::string& suite) {
    if (suite == "tiled_attention_oracle" || suite == "mla_absorption") return 1e-5;
    if (suite == "partition_invariance" || suite == "combine_order") return 1e-6;
    return 1e-12;
  }

  std::vector<SuiteResult> run_all() const {
    std::vector<SuiteResult> out;
    for (const auto& n : suite_names()) out.push_back(run(n));
    return out;
  }

  SuiteResult run(const std::string& name) const {
    SuiteResult r;
    r.name = name;
    r.tolerance = opt_.tolerance.count(name) ? opt_.tolerance.at(name) : default_tolerance(name);
    // Each suite gets its own stream so adding suites never shifts others.
    numerics_detail::Rng rng(opt_.seed * 1000003u + numerics_detail::fnv1a(name));
    const bool bug = opt_.fault == name;
    if (name == "tiled_attention_oracle") tiled_oracle(rng, bug, r);
    else if (name == "partition_invariance") partition(rng, bug, r);
    else if (name == "combine_order") combine(rng, bug, r);
    else if (name == "online_softmax") softmax(rng, bug, r);
    else if (name == "layernorm_merge") layernorm(rng, bug, r);
    else if (name == "rmsnorm_merge") rmsnorm(rng, bug, r);
    else if (name == "mla_absorption") mla(rng, bug, r);
    else throw std::invalid_argument("numerics: unknown suite " + name);
    if (r.passed) r.passed = r.max_error <= r.tolerance;
    return r;
  }

 private:
  NumericsOptions opt_;

  std::uint64_t n(std::uint64_t base) const { return numerics_detail::scaled(base, opt_.case_scale); }

  // fp32 tiled loop against the fp64 naive oracle, d <= 64, tokens <= 512.
  void tiled_oracle(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(1000);
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
      const std::size_t t = std::uniform_int_distribution<std::size_t>(1, 512)(rng);
      auto q = rand_vec<float>(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
      auto k = rand_mat<float>(rng, t, d, 1.0);
      auto v = rand_mat<float>(rng, t, d, 1.0);
      auto sizes = rand_partition(rng, t, std::uniform_int_distribution<std::size_t>(1, 128)(rng));
      auto blocks = split_blocks(k, v, std::span<const std::size_t>(sizes));
      auto got = bug ? tiled_no_rescale<float>(q, blocks) : tiled_attention<float>(q, blocks);
      auto ref = naive_attention(std::span<const float>(q), k, v);
      r.max_error = std::max(r.max_error, rel_error<float, double>(got.out, ref));
    }
    r.passed = true;
  }

  // Arbitrary block partitions at 64-bit working precision.
  void partition(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(1000);
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
      const std::size_t t = std::uniform_int_distribution<std::size_t>(1, 512)(rng);
      auto q = rand_vec<double>(rng, d, 0.5);
      auto k = rand_mat<double>(rng, t, d, 1.0);
      auto v = rand_mat<double>(rng, t, d, 1.0);
      auto sizes = rand_partition(rng, t, std::uniform_int_distribution<std::size_t>(1, 64)(rng));
      auto blocks = split_blocks(k, v, std::span<const std::size_t>(sizes));
      auto got = bug ? tiled_no_rescale<double>(q, blocks) : tiled_attention<double>(q, blocks);
      auto ref = naive_attention(std::span<const double>(q), k, v);
      r.max_error = std::max(r.max_error, rel_error<double, double>(got.out, ref));
    }
    r.passed = true;
  }

  // Random association trees over per-block partials at 64-bit working
  // precision; empty state must be exact.
  void combine(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    auto merge = [bug](const AttnPartial<double>& a, const AttnPartial<double>& b) {
      return bug ? combine_equal_weights(a, b) : combine_partials(a, b);
    };
    r.cases = n(200);
    bool identity = true;
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
      const std::size_t t = std::uniform_int_distribution<std::size_t>(2, 256)(rng);
      auto q = rand_vec<double>(rng, d, 0.3);
      auto k = rand_mat<double>(rng, t, d, 1.0);
      auto v = rand_mat<double>(rng, t, d, 1.0);
      auto sizes = rand_partition(rng, t, std::uniform_int_distribution<std::size_t>(1, 40)(rng));
      auto blocks = split_blocks(k, v, std::span<const std::size_t>(sizes));
      std::vector<AttnPartial<double>> parts;
      for (const auto& b : blocks) parts.push_back(tiled_attention<double>(q, std::span(&b, 1)));
      std::vector<AttnPartial<double>> results;
      for (int order = 0; order < 5; ++order) {
        auto work = parts;
        while (work.size() > 1) {
          std::uniform_int_distribution<std::size_t> pick(0, work.size() - 1);
          std::size_t a = pick(rng), b = pick(rng);
          while (b == a) b = pick(rng);
          auto m = (rng() & 1) ? merge(work[a], work[b]) : merge(work[b], work[a]);
          work.erase(work.begin() + static_cast<std::ptrdiff_t>(std::max(a, b)));
          work.erase(work.begin() + static_cast<std::ptrdiff_t>(std::min(a, b)));
          work.push_back(std::move(m));
        }
        results.push_back(work.front());
      }
      for (const auto& x : results) r.max_error = std::max(r.max_error, rel_error<double, double>(x.out, results[0].out));
      const auto e = AttnPartial<double>::empty(d);
      const auto& p = parts.front();
      const auto l = merge(e, p), rr = merge(p, e);
      identity = identity && l.out == p.out && rr.out == p.out && l.max == p.max && l.denom == p.denom;
    }
    r.passed = identity;
    if (!identity) r.note = "empty state is not an identity";
  }

  // Online softmax step over a split sequence against a one-shot softmax.
  void softmax(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(500);
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(2, 300)(rng);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, t - 1)(rng);
      auto x = rand_vec<double>(rng, t, 4.0);
      const auto ref = direct_softmax(x);
      std::vector<double> head(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
      std::vector<double> tail(x.begin() + static_cast<std::ptrdiff_t>(k), x.end());
      auto s1 = online_softmax_step<double>(head, AttnPartial<double>::empty(1));
      AttnPartial<double> prev{{0.0}, s1.max, bug ? 0.0 : s1.denom};
      auto s2 = online_softmax_step<double>(tail, prev);
      // Earlier probabilities are rescaled by alpha.
      for (std::size_t j = 0; j < k; ++j) r.max_error = std::max(r.max_error, rel(s1.probs[j] * s2.alpha, ref[j]));
      for (std::size_t j = k; j < t; ++j) r.max_error = std::max(r.max_error, rel(s2.probs[j - k], ref[j]));
    }
    r.passed = true;
  }

  void layernorm(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(500);
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(2, 1024)(rng);
      const double offset = std::uniform_real_distribution<double>(-10, 10)(rng);
      auto x = rand_vec<double>(rng, len, 3.0);
      for (auto& v : x) v += offset;
      double s = 0;
      for (double v : x) s += v;
      const double mean = s / static_cast<double>(len);
      double acc = 0;
      for (double v : x) acc += (v - mean) * (v - mean);
      const double var = acc / static_cast<double>(len);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, len - 1)(rng);
      auto a = NormStats<double>::of(std::span<const double>(x).first(k));
      auto b = NormStats<double>::of(std::span<const double>(x).subspan(k));
      auto m = merge_norm_stats(a, b);
      if (bug) m.var = (static_cast<double>(a.n) * a.var + static_cast<double>(b.n) * b.var) / static_cast<double>(len);
      r.max_error = std::max({r.max_error, rel(m.mean, mean), rel(m.var, var)});
    }
    r.passed = true;
  }

  // Squared sums merged over a random number of shards.
  void rmsnorm(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(500);
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(2, 2048)(rng);
      auto x = rand_vec<double>(rng, len, 2.0);
      double sq = 0;
      for (double v : x) sq += v * v;
      auto sizes = rand_partition(rng, len, std::uniform_int_distribution<std::size_t>(1, len)(rng));
      std::vector<NormStats<double>> shards;
      std::size_t first = 0;
      for (auto s : sizes) {
        shards.push_back(NormStats<double>::of(std::span<const double>(x).subspan(first, s)));
        first += s;
      }
      auto acc = shards.front();
      for (std::size_t j = 1; j < shards.size(); ++j) {
        auto merged = merge_norm_stats(acc, shards[j]);
        if (bug) merged.sq_sum = std::max(acc.sq_sum, shards[j].sq_sum);
        acc = merged;
      }
      const double rms_ref = std::sqrt(sq / static_cast<double>(len));
      const double rms = std::sqrt(acc.sq_sum / static_cast<double>(acc.n));
      r.max_error = std::max({r.max_error, rel(acc.sq_sum, sq), rel(rms, rms_ref)});
    }
    r.passed = true;
  }

  // Absorbed latent attention against naive reconstruction, both at 64-bit
  // working precision.
  void mla(numerics_detail::Rng& rng, bool bug, SuiteResult& r) const {
    using namespace numerics_detail;
    r.cases = n(200);
    bool smaller = true;
    auto U = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    for (std::uint64_t i = 0; i < r.cases; ++i) {
      MlaShape s;
      s.heads = U(1, 8);
      s.head_dim = U(1, 16);
      s.value_dim = U(1, 16);
      s.latent_dim = U(1, 32);
      s.rope_dim = U(0, 8);
      s.query_latent_dim = U(1, 24);
      s.model_dim = U(1, 24);
      const std::size_t t = U(1, 200);
      MlaWeights<double> w;
      w.up_q = rand_mat<double>(rng, s.query_latent_dim, s.heads * s.head_dim,
                               1.0 / std::sqrt(static_cast<double>(s.query_latent_dim)));
      const double ws = 1.0 / std::sqrt(static_cast<double>(s.latent_dim));
      w.up_k = rand_mat<double>(rng, s.latent_dim, s.heads * s.head_dim, ws);
      w.up_v = rand_mat<double>(rng, s.latent_dim, s.heads * s.value_dim, ws);
      w.out = rand_mat<double>(rng, s.heads * s.value_dim, s.model_dim, 0.3);
      MlaQuery<double> q{rand_vec<double>(rng, s.query_latent_dim, 1.0), rand_vec<double>(rng, s.heads * s.rope_dim, 0.5)};
      std::vector<LatentEntry<double>> cache;
      for (std::size_t j = 0; j < t; ++j)
        cache.push_back({rand_vec<double>(rng, s.latent_dim, 1.0), rand_vec<double>(rng, s.rope_dim, 0.5)});
      auto qa = q;
      if (bug) std::fill(qa.rope.begin(), qa.rope.end(), 0.0);
      IntermediateTracker ta, tn;
      auto got = mla_absorbed_attention<double>(s, qa, cache, w, 64, &ta);
      auto ref = mla_naive_attention(s, q, std::span<const LatentEntry<double>>(cache), w, &tn);
      r.max_error = std::max(r.max_error, rel_error<double, double>(got, ref));
      if (s.latent_dim < s.heads * s.head_dim && !(ta.peak_elements < tn.peak_elements)) smaller = false;
    }
    r.passed = smaller;
    if (!smaller) r.note = "absorbed peak intermediate not smaller";
  }
};

inline std::vector<SuiteResult> validate_numerics(NumericsOptions opt = {}) {
  if (opt.fault.empty()) opt.fault = kDefaultNumericsFault;
  return NumericsValidator(std::move(opt)).run_all();
}

inline bool all_passed(const std::vector<SuiteResult>& rs) {
  return std::all_of(rs.begin(), rs.end(), [](const SuiteResult& r) { return r.passed; });
}

}  // namespace hbsim
