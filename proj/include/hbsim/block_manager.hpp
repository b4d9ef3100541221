#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "hbsim/mesh.hpp"

namespace hbsim {

using RequestId = std::uint64_t;

struct PeState {
  Coord coord;
  int index = 0;
  std::uint64_t t_sum = 0;
  std::uint32_t n_last = 0;
  int d_l1 = 0;
  std::uint64_t l_mst_x = 0;
  std::uint64_t l_mst_y = 0;
  std::uint32_t free_blocks = 0;
  std::uint32_t capacity = 0;

  friend bool operator==(const PeState&, const PeState&) = default;
};

// Strict weak orders over PE states; `true` means a is preferred.
inline bool cmp_full(const PeState& a, const PeState& b) {
  if (a.t_sum != b.t_sum) return a.t_sum < b.t_sum;
  if (a.d_l1 != b.d_l1) return a.d_l1 > b.d_l1;
  return a.index < b.index;
}

inline bool cmp_last(const PeState& a, const PeState& b) {
  if (a.t_sum != b.t_sum) return a.t_sum < b.t_sum;
  if (a.d_l1 != b.d_l1) return a.d_l1 < b.d_l1;
  if (a.n_last != b.n_last) return a.n_last < b.n_last;
  if (a.l_mst_x != b.l_mst_x) return a.l_mst_x < b.l_mst_x;
  if (a.l_mst_y != b.l_mst_y) return a.l_mst_y < b.l_mst_y;
  return a.index < b.index;
}

inline std::uint64_t slot_address(std::uint64_t base, std::uint64_t block, std::uint64_t slot, std::uint64_t b,
                                  std::uint64_t H) {
  if (slot >= b) throw std::invalid_argument("slot_address: slot out of range");
  return base + (block * b + slot) * H;
}

struct BlockRef {
  int pe = 0;
  std::uint32_t local = 0;  // block index inside the PE's KV tensor
  std::uint32_t tokens = 0;
};

struct RequestCache {
  RequestId id = 0;
  std::vector<BlockRef> blocks;  // in token order; back() is the last block
  std::uint64_t tokens = 0;

  std::uint32_t t_last() const { return blocks.empty() ? 0 : blocks.back().tokens; }
};

// One placement decision, with the winner's comparator keys at decision time.
struct PlacementStep {
  RequestId request = 0;
  int pe = 0;
  std::uint32_t local = 0;
  std::uint32_t tokens = 0;
  bool last = false;
  PeState keys;
};

struct AllocatorConfig {
  int m = 4;
  std::uint32_t blocks_per_pe = 64;
  std::uint32_t block_size = 64;
  std::uint64_t kv_bytes_per_token = 1;  // per-iteration key/value bytes of one request
};

inline void check_allocator_config(const AllocatorConfig& c) {
  if (c.m < 1) throw std::invalid_argument("allocator: m must be >= 1");
  if (c.blocks_per_pe == 0) throw std::invalid_argument("allocator: blocks_per_pe must be > 0");
  if (c.block_size == 0) throw std::invalid_argument("allocator: block_size must be > 0");
}

// Spatially-aware blockwise allocator. PE selection uses ordered sets under
// the two comparators; PEs without free blocks are left out of both sets.
class SpatialAllocator {
 public:
  explicit SpatialAllocator(AllocatorConfig cfg) : cfg_(cfg) {
    check_allocator_config(cfg_);
    const int n = cfg_.m * cfg_.m;
    MeshConfig mesh;
    mesh.m = cfg_.m;
    for (int i = 0; i < n; ++i) {
      PeState s;
      s.index = i;
      s.coord = mesh.coord(i);
      s.d_l1 = distance_to_center(cfg_.m, s.coord);
      s.free_blocks = cfg_.blocks_per_pe;
      s.capacity = cfg_.blocks_per_pe;
      pes_.push_back(s);
      std::vector<std::uint32_t> avail;
      for (std::uint32_t b = cfg_.blocks_per_pe; b-- > 0;) avail.push_back(b);
      available_.push_back(std::move(avail));
    }
    full_ = FullSet(FullCmp{this});
    last_ = LastSet(LastCmp{this});
    for (int i = 0; i < n; ++i) insert(i);
  }

  SpatialAllocator(const SpatialAllocator&) = delete;
  SpatialAllocator& operator=(const SpatialAllocator&) = delete;

  const AllocatorConfig& config() const { return cfg_; }
  const std::vector<PeState>& pes() const { return pes_; }
  const std::map<RequestId, RequestCache>& requests() const { return requests_; }
  const std::vector<std::uint32_t>& available(int pe) const { return available_.at(pe); }
  std::uint64_t comparisons() const { return comparisons_; }
  std::uint64_t selections() const { return selections_; }

  std::uint64_t free_blocks() const {
    std::uint64_t f = 0;
    for (const auto& p : pes_) f += p.free_blocks;
    return f;
  }
  std::uint64_t total_blocks() const { return static_cast<std::uint64_t>(pes_.size()) * cfg_.blocks_per_pe; }

  static std::uint64_t blocks_for(std::uint64_t tokens, std::uint32_t b) { return (tokens + b - 1) / b; }

  bool contains(RequestId id) const { return requests_.count(id) != 0; }

  // New request with `tokens` prompt tokens. Returns nullopt (no state change)
  // when the free blocks cannot hold it.
  std::optional<std::vector<PlacementStep>> allocate(RequestId id, std::uint64_t tokens) {
    if (tokens == 0) throw std::invalid_argument("allocate: request needs at least one token");
    if (requests_.count(id)) throw std::invalid_argument("allocate: duplicate request id " + std::to_string(id));
    const std::uint32_t b = cfg_.block_size;
    const std::uint64_t n_full = blocks_for(tokens, b) - 1;
    const auto t_last = static_cast<std::uint32_t>(tokens - n_full * b);
    if (n_full + 1 > free_blocks()) return std::nullopt;
    RequestCache& rc = requests_[id];
    rc.id = id;
    std::vector<PlacementStep> steps;
    for (std::uint64_t i = 0; i < n_full; ++i) steps.push_back(place(rc, b, false));
    steps.push_back(place(rc, t_last, true));
    return steps;
  }

  // Append `tokens` decoded tokens. Fills the last block first, then places
  // fresh one-token last blocks. Returns nullopt (no state change) when out
  // of blocks.
  std::optional<std::vector<PlacementStep>> grow(RequestId id, std::uint64_t tokens = 1) {
    auto it = requests_.find(id);
    if (it == requests_.end()) throw std::invalid_argument("grow: unknown request " + std::to_string(id));
    RequestCache& rc = it->second;
    const std::uint32_t b = cfg_.block_size;
    const std::uint64_t room = b - rc.t_last();
    if (tokens > room && blocks_for(tokens - room, b) > free_blocks()) return std::nullopt;
    std::vector<PlacementStep> steps;
    while (tokens > 0) {
      if (rc.t_last() < b) {
        const auto add = static_cast<std::uint32_t>(std::min<std::uint64_t>(tokens, b - rc.t_last()));
        BlockRef& last = rc.blocks.back();
        update(last.pe, [&](PeState& s) { s.t_sum += add; });
        last.tokens += add;
        rc.tokens += add;
        tokens -= add;
        continue;
      }
      release_last_marker(rc);
      steps.push_back(place(rc, 1, true));
      tokens -= 1;
    }
    return steps;
  }

  std::size_t free(RequestId id) {
    auto it = requests_.find(id);
    if (it == requests_.end()) throw std::invalid_argument("free: unknown request " + std::to_string(id));
    RequestCache& rc = it->second;
    release_last_marker(rc);
    const std::size_t n = rc.blocks.size();
    for (auto b = rc.blocks.rbegin(); b != rc.blocks.rend(); ++b) {
      available_[b->pe].push_back(b->local);
      const std::uint32_t t = b->tokens;
      update(b->pe, [&](PeState& s) {
        s.t_sum -= t;
        s.free_blocks += 1;
      });
    }
    requests_.erase(it);
    return n;
  }

  // Blocks held by a request on each PE.
  std::vector<std::vector<std::uint32_t>> request_blocks(RequestId id) const {
    std::vector<std::vector<std::uint32_t>> out(pes_.size());
    for (const auto& b : requests_.at(id).blocks) out[b.pe].push_back(b.local);
    return out;
  }

  // Every block id sits in exactly one list.
  bool exclusive() const {
    std::vector<std::vector<int>> seen(pes_.size(), std::vector<int>(cfg_.blocks_per_pe, 0));
    for (std::size_t p = 0; p < pes_.size(); ++p)
      for (auto b : available_[p]) ++seen[p][b];
    for (const auto& [id, rc] : requests_)
      for (const auto& b : rc.blocks) ++seen[b.pe][b.local];
    for (std::size_t p = 0; p < pes_.size(); ++p) {
      for (int c : seen[p])
        if (c != 1) return false;
      if (available_[p].size() != pes_[p].free_blocks) return false;
    }
    return true;
  }

  // Resident tokens per PE.
  std::vector<std::uint64_t> tokens_per_pe() const {
    std::vector<std::uint64_t> t;
    for (const auto& p : pes_) t.push_back(p.t_sum);
    return t;
  }

 private:
  struct FullCmp {
    const SpatialAllocator* self;
    bool operator()(int a, int b) const {
      ++self->comparisons_;
      return cmp_full(self->pes_[a], self->pes_[b]);
    }
  };
  struct LastCmp {
    const SpatialAllocator* self;
    bool operator()(int a, int b) const {
      ++self->comparisons_;
      return cmp_last(self->pes_[a], self->pes_[b]);
    }
  };
  using FullSet = std::set<int, FullCmp>;
  using LastSet = std::set<int, LastCmp>;

  void insert(int pe) {
    if (pes_[pe].free_blocks == 0) return;
    full_.insert(pe);
    last_.insert(pe);
  }
  void erase(int pe) {
    full_.erase(pe);
    last_.erase(pe);
  }

  // Keys change only while the PE is out of both sets.
  template <typename F>
  void update(int pe, F&& f) {
    erase(pe);
    f(pes_[pe]);
    insert(pe);
  }

  // PEs on the stage-2 (column) and stage-4 (row) scatter paths toward p.
  void add_path_traffic(int pe, bool add) {
    const Coord p = pes_[pe].coord;
    const int m = cfg_.m;
    const int rx = nearest_root(m, p.x), ry = nearest_root(m, p.y);
    const std::uint64_t v = cfg_.kv_bytes_per_token;
    MeshConfig mesh;
    mesh.m = m;
    for (int x = std::min(rx, p.x); x <= std::max(rx, p.x); ++x)
      update(mesh.index({x, p.y}), [&](PeState& s) { s.l_mst_x = add ? s.l_mst_x + v : s.l_mst_x - v; });
    for (int y = std::min(ry, p.y); y <= std::max(ry, p.y); ++y)
      update(mesh.index({p.x, y}), [&](PeState& s) { s.l_mst_y = add ? s.l_mst_y + v : s.l_mst_y - v; });
  }

  void release_last_marker(RequestCache& rc) {
    if (rc.blocks.empty()) return;
    const int pe = rc.blocks.back().pe;
    update(pe, [&](PeState& s) { s.n_last -= 1; });
    add_path_traffic(pe, false);
  }

  PlacementStep place(RequestCache& rc, std::uint32_t tokens, bool last) {
    ++selections_;
    if (full_.empty()) throw std::logic_error("allocator: no PE with free blocks");
    const int pe = last ? *last_.begin() : *full_.begin();
    PlacementStep step;
    step.request = rc.id;
    step.pe = pe;
    step.tokens = tokens;
    step.last = last;
    step.keys = pes_[pe];
    const std::uint32_t local = available_[pe].back();
    available_[pe].pop_back();
    step.local = local;
    update(pe, [&](PeState& s) {
      s.t_sum += tokens;
      s.free_blocks -= 1;
      if (last) s.n_last += 1;
    });
    if (last) add_path_traffic(pe, true);
    rc.blocks.push_back({pe, local, tokens});
    rc.tokens += tokens;
    return step;
  }

  AllocatorConfig cfg_;
  std::vector<PeState> pes_;
  std::vector<std::vector<std::uint32_t>> available_;
  std::map<RequestId, RequestCache> requests_;
  FullSet full_{FullCmp{nullptr}};
  LastSet last_{LastCmp{nullptr}};
  mutable std::uint64_t comparisons_ = 0;
  std::uint64_t selections_ = 0;
};

}  // namespace hbsim
