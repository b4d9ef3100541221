#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hbsim/block_manager.hpp"
#include "hbsim/collectives.hpp"
#include "hbsim/device_config.hpp"
#include "hbsim/schedule.hpp"

namespace hbsim {

// Device-wide activity counters; energy is linear in each.
struct Counters {
  double flops = 0;
  double dram_bytes = 0;
  double sram_bytes = 0;
  double noc_byte_hops = 0;
  double link_bytes = 0;

  Counters& operator+=(const Counters& o) {
    flops += o.flops;
    dram_bytes += o.dram_bytes;
    sram_bytes += o.sram_bytes;
    noc_byte_hops += o.noc_byte_hops;
    link_bytes += o.link_bytes;
    return *this;
  }
  Counters scaled(double k) const { return {flops * k, dram_bytes * k, sram_bytes * k, noc_byte_hops * k, link_bytes * k}; }
};

struct EnergyBreakdown {
  double flop_j = 0;
  double dram_j = 0;
  double sram_j = 0;
  double noc_j = 0;
  double link_j = 0;
  double total() const { return flop_j + dram_j + sram_j + noc_j + link_j; }
};

inline EnergyBreakdown energy_estimate(const Counters& c, const EnergyConfig& e) {
  constexpr double pj = 1e-12;
  EnergyBreakdown b;
  b.flop_j = c.flops * e.flop_pj * pj;
  b.dram_j = c.dram_bytes * 8 * e.dram_bit_pj * pj;
  b.sram_j = c.sram_bytes * 8 * e.sram_bit_pj * pj;
  b.noc_j = c.noc_byte_hops * 8 * e.noc_bit_hop_pj * pj;
  b.link_j = c.link_bytes * 8 * e.link_bit_pj * pj;
  return b;
}

struct OpCost {
  double cycles = 0;
  double compute_cycles = 0;  // compute-only time
  double memory_cycles = 0;   // memory-only time
  Counters counters;
};

struct FcTiling {
  int k_split = 1;
  int n_split = 1;
};

struct FcResult : OpCost {
  std::uint64_t tile_rows = 0;  // H_in / m
  std::uint64_t tile_cols = 0;  // H_out / m
  FcTiling tiling;
};

// Hidden-dimension partition: each PE owns a (H_in/m) x (H_out/m) weight
// tile. Sub-tiles must fit half of the compute buffer (double buffering).
inline FcResult fc_latency(std::uint64_t B, std::uint64_t H_in, std::uint64_t H_out, const DeviceConfig& dev,
                           int bytes_per_elem = 2) {
  if (B == 0 || H_in == 0 || H_out == 0) throw std::invalid_argument("fc_latency: dims must be positive");
  const auto m = static_cast<std::uint64_t>(dev.mesh.m);
  const double P = static_cast<double>(m * m);
  const double bpe = bytes_per_elem;
  FcResult r;
  r.tile_rows = ceil_div(H_in, m);
  r.tile_cols = ceil_div(H_out, m);
  const double rows = static_cast<double>(r.tile_rows), cols = static_cast<double>(r.tile_cols);
  const double Bd = static_cast<double>(B);
  const double weight = rows * cols * bpe;
  const double act = Bd * (rows + cols) * bpe;
  const double flops = 2.0 * Bd * rows * cols;
  r.memory_cycles = (weight + act) / dev.dram_bytes_per_cycle();
  r.compute_cycles = flops / dev.mac_flops_per_cycle;

  const double budget = dev.compute_buffer_bytes / 2;
  bool found = false;
  double best = 0;
  for (std::uint64_t ks = 1; ks <= r.tile_rows; ks *= 2) {
    for (std::uint64_t ns = 1; ns <= r.tile_cols; ns *= 2) {
      const double sub_r = std::ceil(rows / static_cast<double>(ks));
      const double sub_c = std::ceil(cols / static_cast<double>(ns));
      const double bytes = sub_r * sub_c * bpe + Bd * sub_r * bpe + Bd * sub_c * 4.0;
      if (bytes > budget) continue;
      const double c = std::max(r.memory_cycles, r.compute_cycles) + static_cast<double>(ks * ns) * dev.fc_setup_cycles;
      if (!found || c < best) {
        found = true;
        best = c;
        r.tiling = {static_cast<int>(ks), static_cast<int>(ns)};
      }
    }
  }
  if (!found)
    throw std::invalid_argument("fc_latency: activations for batch " + std::to_string(B) +
                                " exceed the compute buffer even with full sub-tiling");
  r.cycles = best;
  // Activations reread once per column split, partial sums spilled per extra K split.
  const double sram = Bd * rows * bpe * r.tiling.n_split + Bd * cols * bpe + Bd * cols * 4.0 * 2.0 * (r.tiling.k_split - 1);
  r.counters.flops = flops * P;
  r.counters.dram_bytes = weight * P;
  r.counters.sram_bytes = sram * P;
  return r;
}

struct AttentionShape {
  int q_heads = 1;
  int kv_heads = 1;
  int key_dim = 64;
  int value_dim = 64;
  int value_compute_dim = 64;
  int bytes_per_elem = 2;

  double kv_bytes_per_token() const { return static_cast<double>(kv_heads) * (key_dim + value_dim) * bytes_per_elem; }
  double flops_per_token() const { return 2.0 * q_heads * (key_dim + value_compute_dim); }
};

inline AttentionShape attention_shape(const ModelConfig& model, const DeviceConfig& dev) {
  const auto s = shard(model, dev);
  return {s.q_heads, s.kv_heads, s.key_dim, s.value_dim, s.value_compute_dim, model.bytes_per_elem};
}

constexpr double kSoftmaxOpsPerScore = 5;  // max, subtract, exp, sum, scale

// Tokens per macro block: half the compute buffer, whole KV blocks, two groups.
inline std::uint64_t macro_block_tokens(const AttentionShape& a, const DeviceConfig& dev) {
  const double half = dev.compute_buffer_bytes / 2;
  auto t = static_cast<std::uint64_t>(half / a.kv_bytes_per_token());
  const std::uint64_t unit = 2ull * dev.block_size;
  t = t / unit * unit;
  return std::max<std::uint64_t>(t, unit);
}

struct MacroCost {
  double mem = 0;
  double gemm = 0;
  double vec = 0;
  double cycles() const { return std::max(mem, std::max(gemm, vec)); }
};

inline MacroCost macro_block_cost(double tokens, const AttentionShape& a, const DeviceConfig& dev) {
  MacroCost c;
  if (tokens <= 0) return c;
  c.mem = tokens * a.kv_bytes_per_token() / dev.dram_bytes_per_cycle();
  c.gemm = tokens * a.flops_per_token() / dev.mac_flops_per_cycle;
  // Scores plus one output rescale per group.
  c.vec = (tokens * a.q_heads * kSoftmaxOpsPerScore + 2.0 * 2.0 * a.q_heads * a.value_compute_dim) /
          dev.vector_ops_per_cycle;
  return c;
}

struct PeAttention {
  double cycles = 0;
  double compute_cycles = 0;
  double memory_cycles = 0;
};

inline PeAttention attention_pe_cycles(std::uint64_t tokens, const AttentionShape& a, const DeviceConfig& dev) {
  PeAttention r;
  if (tokens == 0) return r;
  const std::uint64_t M = macro_block_tokens(a, dev);
  const std::uint64_t full = tokens / M, rem = tokens % M;
  const auto big = macro_block_cost(static_cast<double>(M), a, dev);
  const auto tail = macro_block_cost(static_cast<double>(rem), a, dev);
  const double n = static_cast<double>(full);
  r.cycles = n * big.cycles() + tail.cycles();
  r.compute_cycles = n * std::max(big.gemm, big.vec) + std::max(tail.gemm, tail.vec);
  r.memory_cycles = n * big.mem + tail.mem;
  return r;
}

struct AttentionResult : OpCost {
  std::vector<double> pe_cycles;
};

// Device attention time is the slowest PE.
inline AttentionResult attention_latency(const std::vector<std::uint64_t>& pe_tokens, const AttentionShape& a,
                                         const DeviceConfig& dev) {
  if (pe_tokens.size() != static_cast<std::size_t>(dev.pe_count()))
    throw std::invalid_argument("attention_latency: need one token count per PE");
  AttentionResult r;
  double tokens = 0;
  for (auto t : pe_tokens) {
    auto pe = attention_pe_cycles(t, a, dev);
    r.pe_cycles.push_back(pe.cycles);
    if (pe.cycles >= r.cycles) {
      r.cycles = pe.cycles;
      r.compute_cycles = pe.compute_cycles;
      r.memory_cycles = pe.memory_cycles;
    }
    tokens += static_cast<double>(t);
  }
  r.counters.flops = tokens * a.flops_per_token();
  r.counters.dram_bytes = tokens * a.kv_bytes_per_token();
  r.counters.sram_bytes = tokens * a.q_heads * 4.0;  // fp32 scores
  return r;
}

// Resident KV of the current decode batch.
struct BatchState {
  std::vector<std::uint64_t> pe_tokens;
  std::vector<KvTarget> targets;  // PE holding each request's last block
};

// Places `batch` requests of `ctx_len` tokens with the spatial allocator.
inline BatchState place_batch(std::uint64_t batch, std::uint64_t ctx_len, const ModelConfig& model,
                              const DeviceConfig& dev) {
  AllocatorConfig ac;
  ac.m = dev.mesh.m;
  ac.blocks_per_pe = dev.blocks_per_pe;
  ac.block_size = dev.block_size;
  ac.kv_bytes_per_token = kv_bytes_per_token_layer(model, dev);
  SpatialAllocator alloc(ac);
  BatchState s;
  for (std::uint64_t r = 0; r < batch; ++r)
    if (!alloc.allocate(r, ctx_len))
      throw std::runtime_error("out of KV capacity: " + std::to_string(batch) + " x " + std::to_string(ctx_len) + " tokens");
  s.pe_tokens = alloc.tokens_per_pe();
  for (const auto& [id, rc] : alloc.requests()) s.targets.push_back({id, dev.mesh.coord(rc.blocks.back().pe)});
  return s;
}

enum class Tag { Compute, IntraComm, InterComm };
inline const char* tag_name(Tag t) {
  switch (t) {
    case Tag::Compute: return "compute";
    case Tag::IntraComm: return "intra_comm";
    case Tag::InterComm: return "inter_comm";
  }
  return "?";
}

struct ReportEntry {
  std::string op;
  Tag tag = Tag::Compute;
  double cycles = 0;       // summed over layers
  std::string flow;        // comm flow type, empty for compute
};

// DRAM activity of one operator on an average PE, for prefill overlap.
struct BusySegment {
  double cycles = 0;
  double dram_bytes_per_pe = 0;
};

struct IterationReport {
  std::vector<ReportEntry> entries;
  std::map<std::string, double> comm_by_flow;
  AxisTraffic traffic;  // bytes per link traversal, all layers
  Counters counters;
  EnergyBreakdown energy;
  std::vector<double> attention_pe_cycles;  // one layer
  std::vector<BusySegment> timeline;        // one layer, repeated `layers` times
  int layers = 0;
  double compute = 0;
  double intra = 0;
  double inter = 0;
  double total = 0;

  double x_traffic_fraction() const {
    const auto t = traffic.total();
    return t == 0 ? 0.0 : static_cast<double>(traffic.x) / static_cast<double>(t);
  }
  double seconds(const DeviceConfig& dev) const { return total / (dev.frequency_ghz * 1e9); }
};

// Ring all-reduce over d devices on the inter-device link.
inline double ring_all_reduce_cycles(double bytes, int devices, double link_bytes_per_cycle) {
  if (devices <= 1) return 0.0;
  return 2.0 * (devices - 1) / devices * bytes / link_bytes_per_cycle;
}

struct FlowCost {
  double cycles = 0;
  AxisTraffic traffic;
};

inline FlowCost flow_cost(const CommSchedule& s, const MeshConfig& mesh) { return {cost_of_schedule(s, mesh), axis_traffic(s)}; }

// Decode-iteration evaluator. Holds a flow-cost cache and the expert-routing
// RNG; not thread-safe, one instance per simulation.
class DecodeModel {
 public:
  DecodeModel(ModelConfig model, DeviceConfig dev, std::uint64_t seed = 1,
              const LineCollective& algo = default_line_algorithm())
      : model_(std::move(model)), dev_(std::move(dev)), rng_(seed), algo_(&algo) {
    model_.validate();
    dev_.validate();
    sd_ = shard(model_, dev_);
    attn_ = attention_shape(model_, dev_);
  }

  const ModelConfig& model() const { return model_; }
  const DeviceConfig& device() const { return dev_; }

  IterationReport iterate(const BatchState& batch);

 private:
  struct Builder;
  FlowCost cached(const std::string& kind, std::uint64_t bytes);
  FlowCost kv_cost(const BatchState& batch, std::uint64_t bytes);
  void add_fc(Builder& b, const std::string& op, std::uint64_t B, std::uint64_t h_in, std::uint64_t h_out, double k = 1);
  void add_flow(Builder& b, const std::string& op, const std::string& flow, const FlowCost& f, double k = 1);
  void add_norm(Builder& b, const std::string& op, std::uint64_t B, double k);
  void add_attention_block(Builder& b, const BatchState& batch, std::uint64_t B, double k);
  void add_mla_block(Builder& b, const BatchState& batch, std::uint64_t B, double k);
  void add_dense_ffn(Builder& b, std::uint64_t B, double k);
  void add_moe_ffn(Builder& b, std::uint64_t B);

  ModelConfig model_;
  DeviceConfig dev_;
  ShardDims sd_;
  AttentionShape attn_;
  std::mt19937_64 rng_;
  const LineCollective* algo_;
  std::map<std::pair<std::string, std::uint64_t>, FlowCost> cache_;
  std::map<std::pair<std::vector<std::uint32_t>, std::uint64_t>, FlowCost> kv_cache_;
};

struct DecodeModel::Builder {
  IterationReport rep;
  std::map<std::string, std::size_t> index;
  bool first_layer = true;

  void add(const std::string& op, Tag tag, double cycles, const std::string& flow = "") {
    auto it = index.find(op);
    if (it == index.end()) {
      index[op] = rep.entries.size();
      rep.entries.push_back({op, tag, cycles, flow});
    } else {
      rep.entries[it->second].cycles += cycles;
    }
    if (!flow.empty()) rep.comm_by_flow[flow] += cycles;
  }
  void busy(double cycles, double dram_per_pe, double k) {
    // Timeline is per layer; k > 1 means the op repeats identically every layer.
    (void)k;
    if (first_layer) rep.timeline.push_back({cycles, dram_per_pe});
  }
};

inline FlowCost DecodeModel::cached(const std::string& kind, std::uint64_t bytes) {
  auto key = std::make_pair(kind, bytes);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const auto& mesh = dev_.mesh;
  CommSchedule s;
  if (kind == "query_replication") s = query_replication(bytes, mesh, *algo_);
  else if (kind == "attn_output_reduction") s = attn_output_reduction(bytes, mesh, *algo_);
  else if (kind == "ar_x") s = oproj_all_reduce(bytes, mesh, *algo_);
  else if (kind == "ar_y") s = all_reduce_1d(Axis::Y, ceil_div(bytes, mesh.m), mesh, *algo_);
  else if (kind == "norm") s = norm_stats_all_reduce(bytes, mesh, *algo_);
  else throw std::logic_error("unknown flow " + kind);
  auto f = flow_cost(s, mesh);
  cache_[key] = f;
  return f;
}

// Delivery cost depends only on how many requests end on each PE.
inline FlowCost DecodeModel::kv_cost(const BatchState& batch, std::uint64_t bytes) {
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(dev_.pe_count()), 0);
  for (const auto& t : batch.targets) {
    if (!dev_.mesh.contains(t.pe)) throw std::invalid_argument("kv delivery target outside mesh");
    ++counts[static_cast<std::size_t>(dev_.mesh.index(t.pe))];
  }
  auto key = std::make_pair(counts, bytes);
  auto it = kv_cache_.find(key);
  if (it != kv_cache_.end()) return it->second;
  auto f = flow_cost(kv_vector_delivery(batch.targets, bytes, dev_.mesh), dev_.mesh);
  kv_cache_[key] = f;
  return f;
}

inline void DecodeModel::add_fc(Builder& b, const std::string& op, std::uint64_t B, std::uint64_t h_in,
                                std::uint64_t h_out, double k) {
  auto r = fc_latency(B, h_in, h_out, dev_, model_.bytes_per_elem);
  b.add(op, Tag::Compute, r.cycles * k);
  b.rep.counters += r.counters.scaled(k);
  b.busy(r.cycles, r.counters.dram_bytes / dev_.pe_count(), k);
}

inline void DecodeModel::add_flow(Builder& b, const std::string& op, const std::string& flow, const FlowCost& f,
                                  double k) {
  b.add(op, Tag::IntraComm, f.cycles * k, flow);
  b.rep.traffic.x += static_cast<std::uint64_t>(static_cast<double>(f.traffic.x) * k);
  b.rep.traffic.y += static_cast<std::uint64_t>(static_cast<double>(f.traffic.y) * k);
  b.rep.counters.noc_byte_hops += static_cast<double>(f.traffic.total()) * k;
  b.busy(f.cycles, 0, k);
}

inline void DecodeModel::add_norm(Builder& b, const std::string& op, std::uint64_t B, double k) {
  const bool ln = model_.norm == NormKind::LayerNorm;
  const double P = dev_.pe_count();
  const double elems = static_cast<double>(B) * model_.hidden;
  const double cycles = elems * (ln ? 5.0 : 3.0) / P / dev_.vector_ops_per_cycle;
  b.add(op, Tag::Compute, cycles * k);
  b.rep.counters.sram_bytes += elems * model_.bytes_per_elem * 2 * k;
  b.busy(cycles, 0, k);
  const std::uint64_t stats = B * (ln ? 3u : 2u) * 4u;
  add_flow(b, op + "_stats", "norm_all_reduce", cached("norm", stats), k);
}

inline void DecodeModel::add_attention_block(Builder& b, const BatchState& batch, std::uint64_t B, double k) {
  const int bpe = model_.bytes_per_elem;
  const std::uint64_t qd = static_cast<std::uint64_t>(sd_.q_heads) * model_.head_dim;
  const std::uint64_t kvd = static_cast<std::uint64_t>(sd_.kv_heads) * model_.head_dim;
  add_fc(b, "qkv_fc", B, model_.hidden, qd + 2 * kvd, k);
  add_flow(b, "query_replication", "query_replication", cached("query_replication", B * qd * bpe), k);
  add_flow(b, "kv_delivery", "kv_delivery", kv_cost(batch, 2 * kvd * bpe), k);

  auto at = attention_latency(batch.pe_tokens, attn_, dev_);
  b.add("attention", Tag::Compute, at.cycles * k);
  b.rep.counters += at.counters.scaled(k);
  b.busy(at.cycles, at.counters.dram_bytes / dev_.pe_count(), k);
  if (b.first_layer) b.rep.attention_pe_cycles = at.pe_cycles;

  // Partial outputs travel with their (m, l) statistics.
  const std::uint64_t partial = B * static_cast<std::uint64_t>(sd_.q_heads) * (model_.head_dim * bpe + 8);
  add_flow(b, "attn_output_reduction", "attn_output_reduction", cached("attn_output_reduction", partial), k);
  add_fc(b, "o_proj_fc", B, qd, model_.hidden, k);
  add_flow(b, "o_proj_all_reduce", "all_reduce_1d", cached("ar_x", B * model_.hidden * bpe), k);
}

inline void DecodeModel::add_mla_block(Builder& b, const BatchState& batch, std::uint64_t B, double k) {
  const int bpe = model_.bytes_per_elem;
  const auto& d = model_.mla;
  const std::uint64_t H = static_cast<std::uint64_t>(sd_.q_heads);
  const std::uint64_t latent = static_cast<std::uint64_t>(d.kv_latent) + d.rope;
  // Down projections for the query latent and the cached latent + rotary key.
  add_fc(b, "mla_down_fc", B, model_.hidden, d.q_latent + latent, k);
  add_flow(b, "kv_delivery", "kv_delivery", kv_cost(batch, latent * bpe), k);
  add_flow(b, "mla_cq_all_reduce", "all_reduce_1d", cached("ar_x", B * d.q_latent * bpe), k);
  add_fc(b, "mla_up_q_fc", B, d.q_latent, H * (d.nope + d.rope), k);
  add_flow(b, "mla_qc_all_reduce", "all_reduce_1d", cached("ar_y", B * H * (d.nope + d.rope) * bpe), k);
  // Absorbed W_UK, per head nope -> latent.
  add_fc(b, "mla_absorb_q_fc", B, H * d.nope, d.kv_latent, k);
  add_flow(b, "query_replication", "query_replication", cached("query_replication", B * H * latent * bpe), k);

  auto at = attention_latency(batch.pe_tokens, attn_, dev_);
  b.add("attention", Tag::Compute, at.cycles * k);
  b.rep.counters += at.counters.scaled(k);
  b.busy(at.cycles, at.counters.dram_bytes / dev_.pe_count(), k);
  if (b.first_layer) b.rep.attention_pe_cycles = at.pe_cycles;

  const std::uint64_t partial = B * H * (d.kv_latent * bpe + 8);
  add_flow(b, "attn_output_reduction", "attn_output_reduction", cached("attn_output_reduction", partial), k);
  add_fc(b, "mla_up_v_fc", B, d.kv_latent, H * d.v_head, k);
  add_fc(b, "o_proj_fc", B, H * d.v_head, model_.hidden, k);
  add_flow(b, "o_proj_all_reduce", "all_reduce_1d", cached("ar_x", B * model_.hidden * bpe), k);
}

inline void DecodeModel::add_dense_ffn(Builder& b, std::uint64_t B, double k) {
  const int bpe = model_.bytes_per_elem;
  const std::uint64_t up = static_cast<std::uint64_t>(sd_.intermediate) * (model_.ffn == FfnKind::GLU ? 2 : 1);
  add_fc(b, "ffn_fc1", B, model_.hidden, up, k);
  add_flow(b, "ffn_all_reduce_y", "all_reduce_1d", cached("ar_y", B * up * bpe), k);
  add_fc(b, "ffn_fc2", B, sd_.intermediate, model_.hidden, k);
  add_flow(b, "ffn_all_reduce_x", "all_reduce_1d", cached("ar_x", B * model_.hidden * bpe), k);
  b.add("tp_all_reduce_ffn", Tag::InterComm,
        ring_all_reduce_cycles(static_cast<double>(B) * model_.hidden * bpe, dev_.tp, dev_.inter_device_bytes_per_cycle) * k);
  b.rep.counters.link_bytes += (dev_.tp > 1 ? 2.0 * (dev_.tp - 1) / dev_.tp * B * model_.hidden * bpe : 0.0) * k;
  b.busy(0, 0, k);
}

// Experts routed uniformly (distinct top-k per token); each EP device runs
// its local experts one after another, the slowest device sets the time.
inline void DecodeModel::add_moe_ffn(Builder& b, std::uint64_t B) {
  const int bpe = model_.bytes_per_elem;
  const int E = model_.experts;
  add_fc(b, "router_fc", B, model_.hidden, static_cast<std::uint64_t>(E));
  std::vector<std::uint64_t> load(static_cast<std::size_t>(E), 0);
  std::vector<int> ids(static_cast<std::size_t>(E));
  for (std::uint64_t t = 0; t < B; ++t) {
    for (int e = 0; e < E; ++e) ids[static_cast<std::size_t>(e)] = e;
    for (int j = 0; j < model_.top_k; ++j) {
      std::uniform_int_distribution<int> pick(j, E - 1);
      std::swap(ids[static_cast<std::size_t>(j)], ids[static_cast<std::size_t>(pick(rng_))]);
      ++load[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)])];
    }
  }
  const std::uint64_t up = static_cast<std::uint64_t>(sd_.intermediate) * (model_.ffn == FfnKind::GLU ? 2 : 1);
  const int per_dev = sd_.experts_local;
  const int devices = std::max(1, ceil_div_int(E, per_dev));
  double best = -1, best_compute = 0, best_comm = 0;
  Counters all;
  AxisTraffic best_traffic, all_traffic;
  for (int dv = 0; dv < devices; ++dv) {
    double compute = 0, comm = 0;
    AxisTraffic tr;
    for (int e = dv * per_dev; e < std::min(E, (dv + 1) * per_dev); ++e) {
      const std::uint64_t n = load[static_cast<std::size_t>(e)];
      if (n == 0) continue;
      auto f1 = fc_latency(n, model_.hidden, up, dev_, bpe);
      auto f2 = fc_latency(n, sd_.intermediate, model_.hidden, dev_, bpe);
      auto ay = cached("ar_y", n * up * bpe);
      auto ax = cached("ar_x", n * model_.hidden * bpe);
      compute += f1.cycles + f2.cycles;
      comm += ay.cycles + ax.cycles;
      all += f1.counters;
      all += f2.counters;
      tr.x += ay.traffic.x + ax.traffic.x;
      tr.y += ay.traffic.y + ax.traffic.y;
    }
    all_traffic.x += tr.x;
    all_traffic.y += tr.y;
    if (compute + comm > best) {
      best = compute + comm;
      best_compute = compute;
      best_comm = comm;
      best_traffic = tr;
    }
  }
  b.add("moe_experts", Tag::Compute, best_compute);
  b.add("moe_all_reduce", Tag::IntraComm, best_comm, "all_reduce_1d");
  b.rep.counters += all;
  // Only this device's links count toward its traffic split; energy covers every device.
  b.rep.traffic.x += best_traffic.x;
  b.rep.traffic.y += best_traffic.y;
  b.rep.counters.noc_byte_hops += static_cast<double>(all_traffic.total());
  b.busy(best_compute, all.dram_bytes / devices / dev_.pe_count(), 1);
  b.busy(best_comm, 0, 1);
  const double bytes = static_cast<double>(B) * model_.hidden * bpe;
  const int group = std::max(dev_.tp, dev_.ep);
  b.add("ep_all_reduce", Tag::InterComm, ring_all_reduce_cycles(bytes, group, dev_.inter_device_bytes_per_cycle));
  b.rep.counters.link_bytes += group > 1 ? 2.0 * (group - 1) / group * bytes : 0.0;
  b.busy(0, 0, 1);
}

inline IterationReport DecodeModel::iterate(const BatchState& batch) {
  const std::uint64_t B = batch.targets.size();
  if (B == 0) throw std::invalid_argument("decode_iteration_latency: empty batch");
  if (batch.pe_tokens.size() != static_cast<std::size_t>(dev_.pe_count()))
    throw std::invalid_argument("decode_iteration_latency: placement does not match mesh");
  const std::uint64_t cap = static_cast<std::uint64_t>(dev_.blocks_per_pe) * dev_.block_size;
  for (auto t : batch.pe_tokens)
    if (t > cap) throw std::runtime_error("out of KV capacity: PE holds " + std::to_string(t) + " tokens");

  Builder b;
  b.rep.layers = model_.layers;
  const int bpe = model_.bytes_per_elem;
  const double L = model_.layers;
  // Attention half is identical in every layer.
  add_norm(b, "attn_norm", B, L);
  if (model_.attention == AttentionKind::MLA) add_mla_block(b, batch, B, L);
  else add_attention_block(b, batch, B, L);
  const double attn_bytes = static_cast<double>(B) * model_.hidden * bpe;
  b.add("tp_all_reduce_attn", Tag::InterComm, ring_all_reduce_cycles(attn_bytes, dev_.tp, dev_.inter_device_bytes_per_cycle) * L);
  b.rep.counters.link_bytes += (dev_.tp > 1 ? 2.0 * (dev_.tp - 1) / dev_.tp * attn_bytes : 0.0) * L;
  b.busy(0, 0, L);
  add_norm(b, "ffn_norm", B, L);
  if (model_.moe()) {
    for (int l = 0; l < model_.layers; ++l) {
      add_moe_ffn(b, B);
      b.first_layer = false;
    }
  } else {
    add_dense_ffn(b, B, L);
  }

  auto& rep = b.rep;
  for (const auto& e : rep.entries) {
    if (e.tag == Tag::Compute) rep.compute += e.cycles;
    else if (e.tag == Tag::IntraComm) rep.intra += e.cycles;
    else rep.inter += e.cycles;
    rep.total += e.cycles;
  }
  rep.energy = energy_estimate(rep.counters, dev_.energy);
  return rep;
}

inline IterationReport decode_iteration_latency(const ModelConfig& model, const BatchState& batch,
                                                const DeviceConfig& dev, std::uint64_t seed = 1) {
  DecodeModel dm(model, dev, seed);
  return dm.iterate(batch);
}

}  // namespace hbsim
