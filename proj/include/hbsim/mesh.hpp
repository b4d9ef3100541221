#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbsim {

// PE(x, y): x is the row index, y the column index. The X axis varies x
// (a "column line"), the Y axis varies y (a "row line").
struct Coord {
  int x = 0;
  int y = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

enum class Axis { X, Y };
enum class Plane { InterPe, Router };

inline const char* axis_name(Axis a) { return a == Axis::X ? "X" : "Y"; }
inline const char* plane_name(Plane p) { return p == Plane::InterPe ? "inter_pe" : "router"; }

struct MeshConfig {
  int m = 4;
  double link_bandwidth = 64.0;  // bytes/cycle per directed link
  double hop_latency = 2.0;      // cycles per hop

  void validate() const {
    if (m < 1) throw std::invalid_argument("mesh: m must be >= 1");
    if (!(link_bandwidth > 0)) throw std::invalid_argument("mesh: link_bandwidth must be > 0");
    if (!(hop_latency > 0)) throw std::invalid_argument("mesh: hop_latency must be > 0");
  }

  int pe_count() const { return m * m; }
  bool contains(Coord c) const { return c.x >= 0 && c.y >= 0 && c.x < m && c.y < m; }
  int index(Coord c) const { return c.x * m + c.y; }
  Coord coord(int idx) const { return {idx / m, idx % m}; }
};

// Center indices per axis: the symmetric pair for even m, the middle for odd m.
inline std::vector<int> central_indices(int m) {
  if (m < 1) throw std::invalid_argument("central_indices: m must be >= 1");
  if (m % 2 == 0) return {m / 2 - 1, m / 2};
  return {m / 2};
}

// Root index nearer to `target`; ties go to the lower index.
inline int nearest_root(int m, int target) {
  int best = -1;
  for (int c : central_indices(m)) {
    if (best < 0 || std::abs(target - c) < std::abs(target - best)) best = c;
  }
  return best;
}

inline std::vector<Coord> central_pes(int m) {
  std::vector<Coord> out;
  for (int x : central_indices(m))
    for (int y : central_indices(m)) out.push_back({x, y});
  return out;
}

inline int manhattan(Coord a, Coord b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

inline int distance_to_center(int m, Coord c) {
  int best = -1;
  for (Coord k : central_pes(m)) {
    int d = manhattan(c, k);
    if (best < 0 || d < best) best = d;
  }
  return best;
}

// Dimension-ordered route: walk x first, then y. Inclusive of both ends.
inline std::vector<Coord> route_xy(Coord from, Coord to) {
  std::vector<Coord> path{from};
  Coord cur = from;
  while (cur.x != to.x) {
    cur.x += to.x > cur.x ? 1 : -1;
    path.push_back(cur);
  }
  while (cur.y != to.y) {
    cur.y += to.y > cur.y ? 1 : -1;
    path.push_back(cur);
  }
  return path;
}

// Directed link between neighbours on one plane.
struct Link {
  Plane plane = Plane::InterPe;
  Coord from;
  Coord to;
  friend bool operator==(const Link&, const Link&) = default;
  friend auto operator<=>(const Link&, const Link&) = default;

  Axis axis() const { return from.x != to.x ? Axis::X : Axis::Y; }
};

inline std::string coord_str(Coord c) {
  return "(" + std::to_string(c.x) + "," + std::to_string(c.y) + ")";
}

}  // namespace hbsim
