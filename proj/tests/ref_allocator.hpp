#pragma once

// Linear-scan reference for the spatial allocator: same update rules, PE
// selection by scanning every PE with the comparator keys as tuples.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "hbsim/block_manager.hpp"

namespace hbsim::testing {

class RefAllocator {
 public:
  explicit RefAllocator(AllocatorConfig cfg) : cfg_(cfg) {
    const int m = cfg.m;
    for (int i = 0; i < m * m; ++i) {
      PeState s;
      s.index = i;
      s.coord = {i / m, i % m};
      int best = 1 << 30;
      for (int cx : centers())
        for (int cy : centers()) best = std::min(best, std::abs(s.coord.x - cx) + std::abs(s.coord.y - cy));
      s.d_l1 = best;
      s.free_blocks = s.capacity = cfg.blocks_per_pe;
      pes.push_back(s);
      std::vector<std::uint32_t> a;
      for (std::uint32_t b = cfg.blocks_per_pe; b-- > 0;) a.push_back(b);
      avail.push_back(a);
    }
  }

  std::vector<PeState> pes;
  std::vector<std::vector<std::uint32_t>> avail;
  struct Blk {
    int pe;
    std::uint32_t local;
    std::uint32_t tokens;
  };
  std::map<RequestId, std::vector<Blk>> reqs;

  struct Pick {
    int pe;
    std::uint32_t local;
    std::uint32_t tokens;
    bool last;
    friend bool operator==(const Pick&, const Pick&) = default;
  };

  std::optional<std::vector<Pick>> allocate(RequestId id, std::uint64_t tokens) {
    const std::uint32_t b = cfg_.block_size;
    std::uint64_t n_full = (tokens + b - 1) / b - 1;
    auto t_last = static_cast<std::uint32_t>(tokens - n_full * b);
    if (n_full + 1 > total_free()) return std::nullopt;
    std::vector<Pick> out;
    auto& r = reqs[id];
    for (std::uint64_t i = 0; i < n_full; ++i) out.push_back(put(r, argmin(false), b, false));
    out.push_back(put(r, argmin(true), t_last, true));
    return out;
  }

  std::optional<std::vector<Pick>> grow(RequestId id, std::uint64_t tokens) {
    auto& r = reqs.at(id);
    const std::uint32_t b = cfg_.block_size;
    std::uint64_t room = b - r.back().tokens;
    if (tokens > room && (tokens - room + b - 1) / b > total_free()) return std::nullopt;
    std::vector<Pick> out;
    while (tokens > 0) {
      if (r.back().tokens < b) {
        r.back().tokens += 1;
        pes[r.back().pe].t_sum += 1;
        --tokens;
        continue;
      }
      unmark(r.back().pe);
      out.push_back(put(r, argmin(true), 1, true));
      --tokens;
    }
    return out;
  }

  void free(RequestId id) {
    auto& r = reqs.at(id);
    unmark(r.back().pe);
    for (auto it = r.rbegin(); it != r.rend(); ++it) {
      avail[it->pe].push_back(it->local);
      pes[it->pe].t_sum -= it->tokens;
      pes[it->pe].free_blocks += 1;
    }
    reqs.erase(id);
  }

 private:
  std::vector<int> centers() const {
    int m = cfg_.m;
    if (m % 2 == 0) return {m / 2 - 1, m / 2};
    return {m / 2};
  }
  int root(int t) const {
    auto c = centers();
    if (c.size() == 1) return c[0];
    return std::abs(t - c[0]) <= std::abs(t - c[1]) ? c[0] : c[1];
  }
  std::uint64_t total_free() const {
    std::uint64_t f = 0;
    for (auto& p : pes) f += p.free_blocks;
    return f;
  }
  int argmin(bool last) const {
    int best = -1;
    auto key_full = [](const PeState& s) { return std::make_tuple(s.t_sum, -s.d_l1, s.index); };
    auto key_last = [](const PeState& s) {
      return std::make_tuple(s.t_sum, s.d_l1, s.n_last, s.l_mst_x, s.l_mst_y, s.index);
    };
    for (const auto& s : pes) {
      if (s.free_blocks == 0) continue;
      if (best < 0) {
        best = s.index;
        continue;
      }
      bool better = last ? key_last(s) < key_last(pes[best]) : key_full(s) < key_full(pes[best]);
      if (better) best = s.index;
    }
    return best;
  }
  void path(int pe, std::int64_t sign) {
    const int m = cfg_.m;
    Coord p = pes[pe].coord;
    int rx = root(p.x), ry = root(p.y);
    for (int x = std::min(rx, p.x); x <= std::max(rx, p.x); ++x)
      pes[x * m + p.y].l_mst_x += static_cast<std::uint64_t>(sign * static_cast<std::int64_t>(cfg_.kv_bytes_per_token));
    for (int y = std::min(ry, p.y); y <= std::max(ry, p.y); ++y)
      pes[p.x * m + y].l_mst_y += static_cast<std::uint64_t>(sign * static_cast<std::int64_t>(cfg_.kv_bytes_per_token));
  }
  void unmark(int pe) {
    pes[pe].n_last -= 1;
    path(pe, -1);
  }
  Pick put(std::vector<Blk>& r, int pe, std::uint32_t tokens, bool last) {
    std::uint32_t local = avail[pe].back();
    avail[pe].pop_back();
    pes[pe].t_sum += tokens;
    pes[pe].free_blocks -= 1;
    if (last) {
      pes[pe].n_last += 1;
      path(pe, +1);
    }
    r.push_back({pe, local, tokens});
    return {pe, local, tokens, last};
  }

  AllocatorConfig cfg_;
};

inline std::vector<RefAllocator::Pick> picks_of(const std::vector<PlacementStep>& steps) {
  std::vector<RefAllocator::Pick> out;
  for (const auto& s : steps) out.push_back({s.pe, s.local, s.tokens, s.last});
  return out;
}

struct TraceResult {
  std::uint64_t steps = 0;
  std::uint64_t mismatches = 0;
  std::uint64_t state_mismatches = 0;
  std::uint64_t exclusivity_failures = 0;
  std::uint64_t false_failures = 0;
  std::uint64_t allocations = 0;
  std::uint64_t frees = 0;
  std::uint64_t grows = 0;
  std::uint64_t max_spread = 0;  // max - min T_sum seen after any step
};

inline std::uint64_t spread(const std::vector<PeState>& pes) {
  std::uint64_t lo = ~0ull, hi = 0;
  for (const auto& p : pes) {
    lo = std::min(lo, p.t_sum);
    hi = std::max(hi, p.t_sum);
  }
  return hi - lo;
}

// Random allocate / grow / free interleaving, run through the allocator and
// the reference in lockstep.
inline TraceResult lockstep_trace(std::uint64_t seed, std::uint64_t steps, AllocatorConfig cfg,
                                  std::uint64_t max_prompt) {
  std::mt19937_64 rng(seed);
  SpatialAllocator alloc(cfg);
  RefAllocator ref(cfg);
  TraceResult r;
  std::vector<RequestId> live;
  RequestId next = 0;
  std::uniform_int_distribution<std::uint64_t> prompt(1, max_prompt), growth(1, 2 * cfg.block_size);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::uint64_t s = 0; s < steps; ++s) {
    const double x = u(rng);
    if (x < 0.4 || live.empty()) {
      const RequestId id = next++;
      const std::uint64_t t = prompt(rng);
      const std::uint64_t need = (t + cfg.block_size - 1) / cfg.block_size;
      auto a = alloc.allocate(id, t);
      auto b = ref.allocate(id, t);
      if (a.has_value() != b.has_value()) ++r.mismatches;
      if (!a && need <= alloc.free_blocks()) ++r.false_failures;
      if (a && b) {
        if (picks_of(*a) != *b) ++r.mismatches;
        live.push_back(id);
        ++r.allocations;
      }
    } else if (x < 0.7) {
      std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
      const RequestId id = live[pick(rng)];
      const std::uint64_t t = growth(rng);
      auto a = alloc.grow(id, t);
      auto b = ref.grow(id, t);
      if (a.has_value() != b.has_value()) ++r.mismatches;
      if (a && b && picks_of(*a) != *b) ++r.mismatches;
      ++r.grows;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
      const std::size_t i = pick(rng);
      alloc.free(live[i]);
      ref.free(live[i]);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
      ++r.frees;
    }
    if (alloc.pes() != ref.pes) ++r.state_mismatches;
    for (std::size_t p = 0; p < ref.avail.size(); ++p)
      if (alloc.available(static_cast<int>(p)) != ref.avail[p]) ++r.state_mismatches;
    if (!alloc.exclusive()) ++r.exclusivity_failures;
    r.max_spread = std::max(r.max_spread, spread(alloc.pes()));
    ++r.steps;
  }
  return r;
}

// Requests arrive one block at a time and never leave.
inline std::uint64_t one_block_trace_spread(std::uint64_t seed, std::uint64_t steps, AllocatorConfig cfg) {
  std::mt19937_64 rng(seed);
  SpatialAllocator alloc(cfg);
  std::uniform_int_distribution<std::uint64_t> tokens(1, cfg.block_size);
  std::uint64_t worst = 0;
  for (std::uint64_t s = 0; s < steps && alloc.free_blocks() > 0; ++s) {
    alloc.allocate(s, tokens(rng));
    worst = std::max(worst, spread(alloc.pes()));
  }
  return worst;
}

}  // namespace hbsim::testing
