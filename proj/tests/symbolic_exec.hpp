#pragma once

// Symbolic-payload executor for communication schedules. Each PE holds a map
// chunk id -> multiset of source tags (PE linear indices). Reductions union
// the multisets, copies duplicate them.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/collectives.hpp"

namespace hbsim::testing {

using Tags = std::multiset<int>;
using Store = std::map<Coord, std::map<std::uint64_t, Tags>>;

struct SymResult {
  Store store;
  std::uint64_t initial_bytes = 0;
  std::uint64_t final_bytes = 0;
  std::uint64_t copied_bytes = 0;
  std::uint64_t reduced_away_bytes = 0;
};

inline std::uint64_t held_chunks(const Store& s) {
  std::uint64_t n = 0;
  for (const auto& [pe, chunks] : s) n += chunks.size();
  return n;
}

// Phases execute atomically: all reads see the state at phase start.
inline SymResult execute(const CommSchedule& sched, Store store, std::uint64_t chunk_bytes) {
  SymResult r;
  r.initial_bytes = held_chunks(store) * chunk_bytes;
  for (const auto& phase : sched.phases) {
    struct Delivery {
      Coord dst;
      std::uint64_t chunk;
      Tags tags;
      TransferOp op;
    };
    std::vector<Delivery> out;
    std::set<std::pair<Coord, std::uint64_t>> taken;
    for (const auto& t : phase.transfers) {
      if (t.bytes != t.chunks.size() * chunk_bytes) throw std::logic_error("transfer size mismatch");
      for (auto c : t.chunks) {
        auto& src = store[t.src];
        auto it = src.find(c);
        if (it == src.end())
          throw std::logic_error("chunk " + std::to_string(c) + " missing at " + coord_str(t.src));
        out.push_back({t.dst, c, it->second, t.op});
        if (t.op != TransferOp::Copy) {
          if (!taken.insert({t.src, c}).second) throw std::logic_error("chunk sent twice in one phase");
        }
      }
    }
    for (const auto& [pe, c] : taken) store[pe].erase(c);
    for (auto& d : out) {
      auto& dst = store[d.dst];
      auto it = dst.find(d.chunk);
      switch (d.op) {
        case TransferOp::Reduce:
          if (it == dst.end()) {
            dst[d.chunk] = d.tags;
          } else {
            it->second.insert(d.tags.begin(), d.tags.end());
            r.reduced_away_bytes += chunk_bytes;
          }
          break;
        case TransferOp::Move:
          if (it != dst.end()) throw std::logic_error("move onto existing chunk");
          dst[d.chunk] = d.tags;
          break;
        case TransferOp::Copy:
          if (it != dst.end()) throw std::logic_error("copy onto existing chunk");
          dst[d.chunk] = d.tags;
          r.copied_bytes += chunk_bytes;
          break;
      }
    }
  }
  for (auto it = store.begin(); it != store.end();) {
    if (it->second.empty()) it = store.erase(it);
    else ++it;
  }
  r.final_bytes = held_chunks(store) * chunk_bytes;
  r.store = std::move(store);
  return r;
}

inline Tags tags_of(const std::vector<Coord>& pes, int m) {
  Tags t;
  for (Coord c : pes) t.insert(c.x * m + c.y);
  return t;
}

inline std::vector<Coord> all_pes(int m) {
  std::vector<Coord> v;
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) v.push_back({x, y});
  return v;
}

inline std::vector<Coord> line_of(int m, Axis axis, Coord c) {
  return mesh_line(m, axis, axis == Axis::X ? c.y : c.x);
}

inline int position_in_line(Axis axis, Coord c) { return axis == Axis::X ? c.x : c.y; }

inline std::uint64_t gid(int m, int a, int b) { return static_cast<std::uint64_t>(a) * m + b; }

// Initial and expected final stores for each flow.
struct Contract {
  Store initial;
  Store expected;
};

inline Contract contract_all_reduce(int m, Axis axis) {
  Contract k;
  for (Coord c : all_pes(m)) {
    Tags everyone = tags_of(line_of(m, axis, c), m);
    for (int j = 0; j < m; ++j) {
      k.initial[c][j] = Tags{c.x * m + c.y};
      k.expected[c][j] = everyone;
    }
  }
  return k;
}

inline Contract contract_all_gather(int m, Axis axis) {
  Contract k;
  for (Coord c : all_pes(m)) {
    auto line = line_of(m, axis, c);
    k.initial[c][position_in_line(axis, c)] = Tags{c.x * m + c.y};
    for (int j = 0; j < m; ++j) k.expected[c][j] = Tags{line[j].x * m + line[j].y};
  }
  return k;
}

inline Contract contract_reduce_scatter_2d(int m) {
  Contract k;
  Tags everyone = tags_of(all_pes(m), m);
  for (Coord c : all_pes(m)) {
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) k.initial[c][gid(m, a, b)] = Tags{c.x * m + c.y};
    k.expected[c][gid(m, c.x, c.y)] = everyone;
  }
  return k;
}

inline Contract contract_query_replication(int m) {
  Contract k;
  for (Coord c : all_pes(m)) {
    for (int p = 0; p < m; ++p) k.initial[c][gid(m, c.y, p)] = Tags{c.x * m + c.y};
    for (int y = 0; y < m; ++y) {
      Tags column = tags_of(mesh_line(m, Axis::X, y), m);
      for (int p = 0; p < m; ++p) k.expected[c][gid(m, y, p)] = column;
    }
  }
  return k;
}

inline Contract contract_attn_output(int m) {
  Contract k;
  Tags everyone = tags_of(all_pes(m), m);
  for (Coord c : all_pes(m)) {
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) k.initial[c][gid(m, a, b)] = Tags{c.x * m + c.y};
    for (int y = 0; y < m; ++y) k.expected[c][gid(m, c.x, y)] = everyone;
  }
  return k;
}

inline Contract contract_kv_delivery(int m, const std::vector<KvTarget>& targets) {
  Contract k;
  for (const auto& t : targets) {
    for (Coord c : all_pes(m)) k.initial[c][gid(m, static_cast<int>(t.request), c.y)] = Tags{c.x * m + c.y};
    for (int y = 0; y < m; ++y)
      k.expected[t.pe][gid(m, static_cast<int>(t.request), y)] = tags_of(mesh_line(m, Axis::X, y), m);
  }
  return k;
}

inline Store nonempty(Store s) {
  for (auto it = s.begin(); it != s.end();) {
    if (it->second.empty()) it = s.erase(it);
    else ++it;
  }
  return s;
}

// Link traffic derived from the delivery contract and dimension-ordered
// paths alone, without looking at the schedule.
inline std::map<Link, std::uint64_t> kv_delivery_link_oracle(int m, const std::vector<KvTarget>& targets,
                                                             std::uint64_t per_request_bytes) {
  const std::uint64_t sub = (per_request_bytes + m - 1) / m;
  std::map<Link, std::uint64_t> out;
  auto walk = [&](Coord a, Coord b, std::uint64_t bytes) {
    auto path = route_xy(a, b);
    for (std::size_t i = 1; i < path.size(); ++i) out[Link{Plane::InterPe, path[i - 1], path[i]}] += bytes;
  };
  auto root = [&](int target) {
    // Centre index closest to target, lower one on ties.
    int best = -1;
    for (int c = 0; c < m; ++c) {
      bool central = (m % 2 == 0) ? (c == m / 2 - 1 || c == m / 2) : (c == m / 2);
      if (!central) continue;
      if (best < 0 || std::abs(target - c) < std::abs(target - best)) best = c;
    }
    return best;
  };
  for (const auto& t : targets) {
    const int rx = root(t.pe.x), ry = root(t.pe.y);
    for (int y = 0; y < m; ++y) {
      // In-transit reduction: each link toward the root carries one sub-vector.
      for (int x = 0; x < m; ++x)
        if (x != rx) walk({x, y}, {x + (rx > x ? 1 : -1), y}, sub);
      walk({rx, y}, {t.pe.x, y}, sub);
    }
    for (int y = 0; y < m; ++y) {
      if (y == ry) continue;
      // Gathering: link out of y carries every sub-vector at or beyond y.
      int beyond = 0;
      for (int y2 = 0; y2 < m; ++y2)
        if ((y2 - ry) * (y - ry) > 0 && std::abs(y2 - ry) >= std::abs(y - ry)) ++beyond;
      walk({t.pe.x, y}, {t.pe.x, y + (ry > y ? 1 : -1)}, sub * beyond);
    }
    walk({t.pe.x, ry}, t.pe, sub * m);
  }
  for (auto it = out.begin(); it != out.end();) {
    if (it->second == 0) it = out.erase(it);
    else ++it;
  }
  return out;
}

}  // namespace hbsim::testing
