#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/mesh.hpp"

namespace hbsim {

// How the payload lands at the destination.
//   Reduce: merged into the destination's chunk, source gives it up
//   Move:   placed at the destination, source gives it up
//   Copy:   replicated, source keeps it
enum class TransferOp { Reduce, Move, Copy };

inline const char* op_name(TransferOp op) {
  switch (op) {
    case TransferOp::Reduce: return "reduce";
    case TransferOp::Move: return "move";
    case TransferOp::Copy: return "copy";
  }
  return "?";
}

struct Transfer {
  Coord src;
  Coord dst;
  std::vector<Coord> path;  // inclusive of src and dst
  std::uint64_t bytes = 0;
  TransferOp op = TransferOp::Copy;
  std::vector<std::uint64_t> chunks;  // logical chunk ids carried
  Plane plane = Plane::InterPe;

  int hops() const { return path.empty() ? 0 : static_cast<int>(path.size()) - 1; }
};

struct Phase {
  int stage = 0;  // collective-specific step label
  std::vector<Transfer> transfers;
};

struct CommSchedule {
  std::string name;
  std::vector<Phase> phases;

  bool empty() const {
    for (const auto& p : phases)
      if (!p.transfers.empty()) return false;
    return true;
  }

  // Sequential composition.
  CommSchedule& then(const CommSchedule& other) {
    phases.insert(phases.end(), other.phases.begin(), other.phases.end());
    return *this;
  }

  Phase& phase_at(std::size_t i, int stage) {
    while (phases.size() <= i) phases.push_back(Phase{stage, {}});
    return phases[i];
  }
};

inline Transfer make_transfer(Coord src, Coord dst, std::uint64_t bytes, TransferOp op,
                              std::vector<std::uint64_t> chunks, Plane plane = Plane::InterPe) {
  Transfer t;
  t.src = src;
  t.dst = dst;
  t.path = route_xy(src, dst);
  t.bytes = bytes;
  t.op = op;
  t.chunks = std::move(chunks);
  t.plane = plane;
  return t;
}

// Shortest path with at most one turn, every step between neighbours.
inline bool path_is_valid(const Transfer& t, const MeshConfig& mesh) {
  if (t.path.empty() || t.path.front() != t.src || t.path.back() != t.dst) return false;
  for (Coord c : t.path)
    if (!mesh.contains(c)) return false;
  if (t.hops() != manhattan(t.src, t.dst)) return false;
  int turns = 0;
  for (std::size_t i = 1; i < t.path.size(); ++i) {
    if (manhattan(t.path[i - 1], t.path[i]) != 1) return false;
    if (i >= 2) {
      bool a = t.path[i - 1].x != t.path[i - 2].x;
      bool b = t.path[i].x != t.path[i - 1].x;
      if (a != b) ++turns;
    }
  }
  return turns <= 1;
}

inline void validate_schedule(const CommSchedule& s, const MeshConfig& mesh) {
  for (const auto& p : s.phases)
    for (const auto& t : p.transfers)
      if (!path_is_valid(t, mesh))
        throw std::invalid_argument("schedule " + s.name + ": invalid path " + coord_str(t.src) + "->" +
                                    coord_str(t.dst));
}

inline std::map<Link, std::uint64_t> phase_link_traffic(const Phase& p) {
  std::map<Link, std::uint64_t> out;
  for (const auto& t : p.transfers)
    for (std::size_t i = 1; i < t.path.size(); ++i) out[Link{t.plane, t.path[i - 1], t.path[i]}] += t.bytes;
  return out;
}

inline std::map<Link, std::uint64_t> link_traffic(const CommSchedule& s) {
  std::map<Link, std::uint64_t> out;
  for (const auto& p : s.phases)
    for (const auto& [link, bytes] : phase_link_traffic(p)) out[link] += bytes;
  return out;
}

inline double phase_cost(const Phase& p, const MeshConfig& mesh) {
  if (p.transfers.empty()) return 0.0;
  std::uint64_t busiest = 0;
  for (const auto& [link, bytes] : phase_link_traffic(p)) busiest = std::max(busiest, bytes);
  int hops = 0;
  for (const auto& t : p.transfers) hops = std::max(hops, t.hops());
  return static_cast<double>(busiest) / mesh.link_bandwidth + mesh.hop_latency * hops;
}

inline double cost_of_schedule(const CommSchedule& s, const MeshConfig& mesh) {
  double total = 0.0;
  for (const auto& p : s.phases) total += phase_cost(p, mesh);
  return total;
}

struct AxisTraffic {
  std::uint64_t x = 0;
  std::uint64_t y = 0;
  std::uint64_t total() const { return x + y; }
};

inline AxisTraffic axis_traffic(const CommSchedule& s) {
  AxisTraffic a;
  for (const auto& [link, bytes] : link_traffic(s)) (link.axis() == Axis::X ? a.x : a.y) += bytes;
  return a;
}

inline int max_hops(const CommSchedule& s, int stage) {
  int h = 0;
  for (const auto& p : s.phases)
    if (p.stage == stage)
      for (const auto& t : p.transfers) h = std::max(h, t.hops());
  return h;
}

inline std::uint64_t injected_bytes(const CommSchedule& s) {
  std::uint64_t b = 0;
  for (const auto& p : s.phases)
    for (const auto& t : p.transfers) b += t.bytes;
  return b;
}

inline Coord transpose(Coord c) { return {c.y, c.x}; }

inline CommSchedule transpose(const CommSchedule& s) {
  CommSchedule out = s;
  for (auto& p : out.phases)
    for (auto& t : p.transfers) {
      t.src = transpose(t.src);
      t.dst = transpose(t.dst);
      for (auto& c : t.path) c = transpose(c);
    }
  return out;
}

}  // namespace hbsim
