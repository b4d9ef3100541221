#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/mesh.hpp"
#include "hbsim/schedule.hpp"

namespace hbsim {

using Segments = std::vector<std::vector<std::uint64_t>>;

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

// Collective algorithm along one line of PEs. Segment j of a reduce-scatter
// ends on line[j]; segment j of an all-gather starts on line[j].
class LineCollective {
 public:
  virtual ~LineCollective() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Phase> reduce_scatter(const std::vector<Coord>& line, const Segments& segs,
                                            std::uint64_t seg_bytes) const = 0;
  virtual std::vector<Phase> all_gather(const std::vector<Coord>& line, const Segments& segs,
                                        std::uint64_t seg_bytes) const = 0;
};

// Bidirectional pipelined chain: n-1 phases per primitive, every directed
// link carries at most one segment per phase.
class BidirectionalLine final : public LineCollective {
 public:
  std::string name() const override { return "bidirectional"; }

  std::vector<Phase> reduce_scatter(const std::vector<Coord>& line, const Segments& segs,
                                    std::uint64_t seg_bytes) const override {
    const int n = static_cast<int>(line.size());
    std::vector<Phase> out;
    for (int k = 0; k + 1 < n; ++k) {
      Phase p;
      for (int i = 0; i + 1 < n; ++i) {
        if (k < i) continue;
        int t = i + n - 1 - k;
        p.transfers.push_back(make_transfer(line[i], line[i + 1], seg_bytes, TransferOp::Reduce, segs[t]));
      }
      for (int i = 1; i < n; ++i) {
        if (k < n - 1 - i) continue;
        int t = k - (n - 1 - i);
        p.transfers.push_back(make_transfer(line[i], line[i - 1], seg_bytes, TransferOp::Reduce, segs[t]));
      }
      out.push_back(std::move(p));
    }
    return out;
  }

  std::vector<Phase> all_gather(const std::vector<Coord>& line, const Segments& segs,
                                std::uint64_t seg_bytes) const override {
    const int n = static_cast<int>(line.size());
    std::vector<Phase> out;
    for (int k = 0; k + 1 < n; ++k) {
      Phase p;
      for (int i = 0; i + 1 < n; ++i) {
        if (i - k < 0) continue;
        p.transfers.push_back(make_transfer(line[i], line[i + 1], seg_bytes, TransferOp::Copy, segs[i - k]));
      }
      for (int i = 1; i < n; ++i) {
        if (i + k > n - 1) continue;
        p.transfers.push_back(make_transfer(line[i], line[i - 1], seg_bytes, TransferOp::Copy, segs[i + k]));
      }
      out.push_back(std::move(p));
    }
    return out;
  }
};

// One phase, every segment sent straight to its owner. No in-transit merging.
class DirectLine final : public LineCollective {
 public:
  std::string name() const override { return "direct"; }

  std::vector<Phase> reduce_scatter(const std::vector<Coord>& line, const Segments& segs,
                                    std::uint64_t seg_bytes) const override {
    if (line.size() < 2) return {};
    Phase p;
    for (std::size_t i = 0; i < line.size(); ++i)
      for (std::size_t t = 0; t < line.size(); ++t)
        if (t != i) p.transfers.push_back(make_transfer(line[i], line[t], seg_bytes, TransferOp::Reduce, segs[t]));
    return {p};
  }

  std::vector<Phase> all_gather(const std::vector<Coord>& line, const Segments& segs,
                                std::uint64_t seg_bytes) const override {
    if (line.size() < 2) return {};
    Phase p;
    for (std::size_t i = 0; i < line.size(); ++i)
      for (std::size_t t = 0; t < line.size(); ++t)
        if (t != i) p.transfers.push_back(make_transfer(line[i], line[t], seg_bytes, TransferOp::Copy, segs[i]));
    return {p};
  }
};

inline const LineCollective& default_line_algorithm() {
  static const BidirectionalLine algo;
  return algo;
}

inline std::unique_ptr<LineCollective> make_line_algorithm(const std::string& name) {
  if (name == "bidirectional") return std::make_unique<BidirectionalLine>();
  if (name == "direct") return std::make_unique<DirectLine>();
  throw std::invalid_argument("unknown line algorithm: " + name);
}

// Line `which` along `axis`: X lines fix y and vary x, Y lines fix x and vary y.
inline std::vector<Coord> mesh_line(int m, Axis axis, int which) {
  std::vector<Coord> line;
  for (int i = 0; i < m; ++i) line.push_back(axis == Axis::X ? Coord{i, which} : Coord{which, i});
  return line;
}

namespace detail {

// Lay per-line phase lists side by side, starting at the end of `s`.
inline void append_parallel(CommSchedule& s, const std::vector<std::vector<Phase>>& per_line, int stage) {
  const std::size_t base = s.phases.size();
  for (const auto& phases : per_line)
    for (std::size_t k = 0; k < phases.size(); ++k) {
      auto& dst = s.phase_at(base + k, stage);
      dst.transfers.insert(dst.transfers.end(), phases[k].transfers.begin(), phases[k].transfers.end());
    }
}

enum class LineOp { ReduceScatter, AllGather };

template <typename SegFn>
void run_lines(CommSchedule& s, const MeshConfig& mesh, Axis axis, LineOp op, std::uint64_t seg_bytes, SegFn segs_for,
               const LineCollective& algo, int stage) {
  std::vector<std::vector<Phase>> per_line;
  for (int w = 0; w < mesh.m; ++w) {
    auto line = mesh_line(mesh.m, axis, w);
    Segments segs = segs_for(w);
    per_line.push_back(op == LineOp::ReduceScatter ? algo.reduce_scatter(line, segs, seg_bytes)
                                                   : algo.all_gather(line, segs, seg_bytes));
  }
  append_parallel(s, per_line, stage);
}

inline Segments identity_segments(int m) {
  Segments s(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) s[j] = {static_cast<std::uint64_t>(j)};
  return s;
}

}  // namespace detail

// Payload split into m chunks; chunk j reduced on position j, then gathered.
inline CommSchedule all_reduce_1d(Axis axis, std::uint64_t payload_bytes, const MeshConfig& mesh,
                                  const LineCollective& algo = default_line_algorithm()) {
  mesh.validate();
  if (payload_bytes == 0) throw std::invalid_argument("all_reduce_1d: payload must be > 0");
  CommSchedule s;
  s.name = std::string("all_reduce_") + axis_name(axis);
  if (mesh.m == 1) return s;
  const std::uint64_t chunk = ceil_div(payload_bytes, mesh.m);
  auto segs = [&](int) { return detail::identity_segments(mesh.m); };
  detail::run_lines(s, mesh, axis, detail::LineOp::ReduceScatter, chunk, segs, algo, 1);
  detail::run_lines(s, mesh, axis, detail::LineOp::AllGather, chunk, segs, algo, 2);
  return s;
}

// Every PE contributes `payload_bytes`; position j's contribution is chunk j.
inline CommSchedule all_gather_1d(Axis axis, std::uint64_t payload_bytes, const MeshConfig& mesh,
                                  const LineCollective& algo = default_line_algorithm()) {
  mesh.validate();
  if (payload_bytes == 0) throw std::invalid_argument("all_gather_1d: payload must be > 0");
  CommSchedule s;
  s.name = std::string("all_gather_") + axis_name(axis);
  if (mesh.m == 1) return s;
  auto segs = [&](int) { return detail::identity_segments(mesh.m); };
  detail::run_lines(s, mesh, axis, detail::LineOp::AllGather, payload_bytes, segs, algo, 1);
  return s;
}

// Chunk ids for the 2D reduce-scatter: chunk x*m+y ends on PE(x,y).
inline std::uint64_t grid_chunk(int m, int x, int y) { return static_cast<std::uint64_t>(x) * m + y; }

inline std::uint64_t grid_chunk_bytes(std::uint64_t payload_bytes, int m) {
  return ceil_div(payload_bytes, static_cast<std::uint64_t>(m) * m);
}

// X reduce-scatter into row segments, then Y reduce-scatter into chunks.
inline CommSchedule reduce_scatter_2d(std::uint64_t payload_bytes, const MeshConfig& mesh,
                                      const LineCollective& algo = default_line_algorithm()) {
  mesh.validate();
  if (payload_bytes == 0) throw std::invalid_argument("reduce_scatter_2d: payload must be > 0");
  CommSchedule s;
  s.name = "reduce_scatter_2d";
  const int m = mesh.m;
  if (m == 1) return s;
  const std::uint64_t cb = grid_chunk_bytes(payload_bytes, m);
  detail::run_lines(
      s, mesh, Axis::X, detail::LineOp::ReduceScatter, cb * m,
      [&](int) {
        Segments segs(m);
        for (int x = 0; x < m; ++x)
          for (int y = 0; y < m; ++y) segs[x].push_back(grid_chunk(m, x, y));
        return segs;
      },
      algo, 1);
  detail::run_lines(
      s, mesh, Axis::Y, detail::LineOp::ReduceScatter, cb,
      [&](int x) {
        Segments segs(m);
        for (int y = 0; y < m; ++y) segs[y] = {grid_chunk(m, x, y)};
        return segs;
      },
      algo, 2);
  return s;
}

// Column y holds partial sums of sub-vector y, split into m pieces with ids
// y*m+piece. X all-reduce completes each sub-vector, Y all-gather replicates.
inline CommSchedule query_replication(std::uint64_t payload_bytes, const MeshConfig& mesh,
                                      const LineCollective& algo = default_line_algorithm()) {
  mesh.validate();
  if (payload_bytes == 0) throw std::invalid_argument("query_replication: payload must be > 0");
  CommSchedule s;
  s.name = "query_replication";
  const int m = mesh.m;
  if (m == 1) return s;
  const std::uint64_t piece = grid_chunk_bytes(payload_bytes, m);
  auto column_pieces = [&](int y) {
    Segments segs(m);
    for (int p = 0; p < m; ++p) segs[p] = {grid_chunk(m, y, p)};
    return segs;
  };
  detail::run_lines(s, mesh, Axis::X, detail::LineOp::ReduceScatter, piece, column_pieces, algo, 1);
  detail::run_lines(s, mesh, Axis::X, detail::LineOp::AllGather, piece, column_pieces, algo, 1);
  detail::run_lines(
      s, mesh, Axis::Y, detail::LineOp::AllGather, piece * m,
      [&](int) {
        Segments segs(m);
        for (int y = 0; y < m; ++y)
          for (int p = 0; p < m; ++p) segs[y].push_back(grid_chunk(m, y, p));
        return segs;
      },
      algo, 2);
  return s;
}

// 2D reduce-scatter, then Y all-gather: PE(x,y) ends with sub-vector x.
inline CommSchedule attn_output_reduction(std::uint64_t payload_bytes, const MeshConfig& mesh,
                                          const LineCollective& algo = default_line_algorithm()) {
  CommSchedule s = reduce_scatter_2d(payload_bytes, mesh, algo);
  s.name = "attn_output_reduction";
  const int m = mesh.m;
  if (m == 1) return s;
  detail::run_lines(
      s, mesh, Axis::Y, detail::LineOp::AllGather, grid_chunk_bytes(payload_bytes, m),
      [&](int x) {
        Segments segs(m);
        for (int y = 0; y < m; ++y) segs[y] = {grid_chunk(m, x, y)};
        return segs;
      },
      algo, 3);
  return s;
}

struct KvTarget {
  std::uint64_t request = 0;
  Coord pe;
};

// Chunk id of sub-vector y of a request's key/value vector.
inline std::uint64_t kv_chunk(std::uint64_t request, int m, int y) {
  return request * static_cast<std::uint64_t>(m) + static_cast<std::uint64_t>(y);
}

namespace detail {

struct LinkKey {
  Coord src;
  Coord dst;
  friend auto operator<=>(const LinkKey&, const LinkKey&) = default;
};

// Per (phase, src, dst): accumulated chunk list.
using Batches = std::map<int, std::map<LinkKey, std::vector<std::uint64_t>>>;

inline void emit_batches(CommSchedule& s, const Batches& b, std::uint64_t chunk_bytes, TransferOp op, int stage) {
  for (const auto& [level, links] : b) {
    (void)level;
    Phase p{stage, {}};
    for (const auto& [key, chunks] : links)
      p.transfers.push_back(make_transfer(key.src, key.dst, chunk_bytes * chunks.size(), op, chunks));
    if (!p.transfers.empty()) s.phases.push_back(std::move(p));
  }
}

inline int step_toward(int from, int to) { return from + (to > from ? 1 : -1); }

}  // namespace detail

// Four stages: X reduce toward the root row nearer the target row, X scatter,
// Y gather toward the root column nearer the target column, Y scatter.
// Stage-1 and stage-3 trees are chains, one phase per tree level.
inline CommSchedule kv_vector_delivery(const std::vector<KvTarget>& targets, std::uint64_t per_request_bytes,
                                       const MeshConfig& mesh) {
  mesh.validate();
  if (per_request_bytes == 0) throw std::invalid_argument("kv_vector_delivery: payload must be > 0");
  const int m = mesh.m;
  std::set<std::uint64_t> seen;
  for (const auto& t : targets) {
    if (!mesh.contains(t.pe)) throw std::invalid_argument("kv_vector_delivery: target outside mesh");
    if (!seen.insert(t.request).second)
      throw std::invalid_argument("kv_vector_delivery: duplicate request id " + std::to_string(t.request));
  }
  CommSchedule s;
  s.name = "kv_vector_delivery";
  if (m == 1) return s;
  const std::uint64_t sub = ceil_div(per_request_bytes, m);

  int depth = 0;
  for (int c : central_indices(m)) depth = std::max({depth, c, m - 1 - c});

  detail::Batches reduce, scatter_x, gather, scatter_y;
  for (const auto& t : targets) {
    const int root_x = nearest_root(m, t.pe.x);
    const int root_y = nearest_root(m, t.pe.y);
    for (int y = 0; y < m; ++y) {
      const std::uint64_t c = kv_chunk(t.request, m, y);
      for (int x = 0; x < m; ++x) {
        if (x == root_x) continue;
        const int d = std::abs(x - root_x);
        reduce[depth - d][{Coord{x, y}, Coord{detail::step_toward(x, root_x), y}}].push_back(c);
      }
      if (root_x != t.pe.x) scatter_x[0][{Coord{root_x, y}, Coord{t.pe.x, y}}].push_back(c);
    }
    for (int y = 0; y < m; ++y) {
      if (y == root_y) continue;
      const int d = std::abs(y - root_y);
      auto& chunks = gather[depth - d][{Coord{t.pe.x, y}, Coord{t.pe.x, detail::step_toward(y, root_y)}}];
      // Own sub-vector plus everything received from farther out.
      for (int y2 = 0; y2 < m; ++y2)
        if ((y2 - root_y) * (y - root_y) > 0 && std::abs(y2 - root_y) >= d) chunks.push_back(kv_chunk(t.request, m, y2));
    }
    if (root_y != t.pe.y)
      for (int y = 0; y < m; ++y) scatter_y[0][{Coord{t.pe.x, root_y}, t.pe}].push_back(kv_chunk(t.request, m, y));
  }
  detail::emit_batches(s, reduce, sub, TransferOp::Reduce, 1);
  detail::emit_batches(s, scatter_x, sub, TransferOp::Move, 2);
  detail::emit_batches(s, gather, sub, TransferOp::Move, 3);
  detail::emit_batches(s, scatter_y, sub, TransferOp::Move, 4);
  return s;
}

// Fig-7(b) style replication of an output-projection tile result.
inline CommSchedule oproj_all_reduce(std::uint64_t payload_bytes, const MeshConfig& mesh,
                                     const LineCollective& algo = default_line_algorithm()) {
  auto s = all_reduce_1d(Axis::X, ceil_div(payload_bytes, mesh.m), mesh, algo);
  s.name = "oproj_all_reduce";
  return s;
}

// Per-sub-vector statistics merged across columns.
inline CommSchedule norm_stats_all_reduce(std::uint64_t stats_bytes, const MeshConfig& mesh,
                                          const LineCollective& algo = default_line_algorithm()) {
  auto s = all_reduce_1d(Axis::Y, stats_bytes, mesh, algo);
  s.name = "norm_stats_all_reduce";
  return s;
}

}  // namespace hbsim
