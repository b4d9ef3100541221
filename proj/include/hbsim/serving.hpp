#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/block_manager.hpp"
#include "hbsim/coarse_allocator.hpp"
#include "hbsim/device_model.hpp"
#include "hbsim/metrics.hpp"
#include "hbsim/prefill_transfer.hpp"
#include "hbsim/workload.hpp"

namespace hbsim {

enum class AllocPolicy { Helios, Coarse };
enum class ServeMode { Stress, Disaggregated };

inline const char* to_string(AllocPolicy p) { return p == AllocPolicy::Helios ? "helios" : "coarse"; }
inline const char* to_string(ServeMode m) { return m == ServeMode::Stress ? "stress" : "disaggregated"; }
inline AllocPolicy alloc_policy_from(const std::string& s) {
  if (s == "helios") return AllocPolicy::Helios;
  if (s == "coarse") return AllocPolicy::Coarse;
  throw std::invalid_argument("unknown allocator policy: " + s);
}
inline ServeMode serve_mode_from(const std::string& s) {
  if (s == "stress") return ServeMode::Stress;
  if (s == "disaggregated") return ServeMode::Disaggregated;
  throw std::invalid_argument("unknown serving mode: " + s);
}

// Single-server prefill stage: base latency plus prompt / throughput.
struct PrefillModel {
  double base_s = 0.0;
  double tokens_per_s = 0.0;  // 0 means unbounded
  double latency(std::uint64_t prompt) const {
    return base_s + (tokens_per_s > 0 ? static_cast<double>(prompt) / tokens_per_s : 0.0);
  }
};

struct ServingConfig {
  ServeMode mode = ServeMode::Stress;
  AllocPolicy policy = AllocPolicy::Helios;
  int coarse_group_size = 4;  // PEs per coarse group
  double horizon_s = 0.0;     // 0 runs until the workload drains
  double warmup_s = 0.0;
  std::uint64_t max_batch = 0;  // 0 means capacity-bound only
  PrefillModel prefill;
  std::uint64_t seed = 1;  // expert routing

  void validate() const {
    if (coarse_group_size < 1) throw std::invalid_argument("serving: coarse_group_size must be >= 1");
    if (horizon_s < 0 || warmup_s < 0) throw std::invalid_argument("serving: horizon and warmup must be >= 0");
    if (horizon_s > 0 && warmup_s >= horizon_s) throw std::invalid_argument("serving: warmup must end before horizon");
    if (prefill.base_s < 0 || prefill.tokens_per_s < 0) throw std::invalid_argument("serving: bad prefill model");
  }
};

struct TokenSample {
  std::uint64_t request = 0;
  double time = 0;
  double tbt = 0;
};

struct ServingMetrics {
  std::vector<TokenSample> tokens;  // post-warm-up TBT samples
  std::vector<double> e2e;
  double tbt_p50 = 0, tbt_p99 = 0, tbt_mean = 0;
  double e2e_p50 = 0, e2e_p99 = 0;
  double throughput = 0;  // decode tokens per second
  double peak_fragmentation = 0;
  double mean_imbalance = 0;
  double x_traffic_fraction = 0;
  double non_overlapped_fraction = 0;
  double mean_batch = 0;
  std::uint64_t iterations = 0;
  std::uint64_t admitted = 0;
  std::uint64_t completed = 0;
  std::uint64_t queued_at_end = 0;
  std::uint64_t in_flight_at_end = 0;
  std::uint64_t emitted_tokens = 0;
  std::uint64_t completed_decode_tokens = 0;
  std::uint64_t partial_tokens = 0;
  double sim_time = 0;
};

// One allocator decision for audit traces. `freed` is set on release.
struct AllocEvent {
  std::uint64_t iteration = 0;
  std::string kind;  // admit, grow, release
  RequestId request = 0;
  std::optional<PlacementStep> step;
  std::size_t freed = 0;
};

// KV placement behind one interface for both policies.
class KvPolicy {
 public:
  virtual ~KvPolicy() = default;
  // Placement log, only the spatial policy records into it.
  void set_trace(std::vector<AllocEvent>* log) { log_ = log; }
  void set_iteration(std::uint64_t it) { iteration_ = it; }
  virtual bool admit(RequestId id, std::uint64_t prompt, std::uint64_t final_tokens) = 0;
  virtual void grow(RequestId id) = 0;
  virtual void release(RequestId id) = 0;
  virtual BatchState batch_state(const std::vector<RequestId>& batch) const = 0;
  // Allocated memory per unit over one unit's capacity.
  virtual double fragmentation() const = 0;
  // Per-unit attention latency from per-PE latency.
  virtual std::vector<double> unit_latency(const std::vector<double>& pe_cycles) const = 0;
  virtual bool fits_ever(std::uint64_t prompt, std::uint64_t final_tokens) const = 0;

 protected:
  void record(const char* kind, RequestId id, const std::vector<PlacementStep>& steps) {
    if (!log_) return;
    for (const auto& st : steps) log_->push_back({iteration_, kind, id, st, 0});
  }
  std::vector<AllocEvent>* log_ = nullptr;
  std::uint64_t iteration_ = 0;
};

class HeliosPolicy final : public KvPolicy {
 public:
  HeliosPolicy(const AllocatorConfig& cfg, const MeshConfig& mesh) : alloc_(cfg), mesh_(mesh) {}

  bool admit(RequestId id, std::uint64_t prompt, std::uint64_t final_tokens) override {
    const std::uint64_t need = SpatialAllocator::blocks_for(final_tokens, alloc_.config().block_size);
    if (committed_ + need > alloc_.total_blocks()) return false;
    auto steps = alloc_.allocate(id, prompt);
    if (!steps) return false;
    record("admit", id, *steps);
    committed_ += need;
    commit_[id] = need;
    return true;
  }
  void grow(RequestId id) override {
    auto steps = alloc_.grow(id, 1);
    if (!steps) throw std::logic_error("helios: growth beyond committed blocks");
    record("grow", id, *steps);
  }
  void release(RequestId id) override {
    const std::size_t n = alloc_.free(id);
    if (log_) log_->push_back({iteration_, "release", id, std::nullopt, n});
    committed_ -= commit_.at(id);
    commit_.erase(id);
  }
  BatchState batch_state(const std::vector<RequestId>& batch) const override {
    BatchState s;
    s.pe_tokens.assign(static_cast<std::size_t>(mesh_.pe_count()), 0);
    for (auto id : batch) {
      const auto& rc = alloc_.requests().at(id);
      for (const auto& b : rc.blocks) s.pe_tokens[static_cast<std::size_t>(b.pe)] += b.tokens;
      s.targets.push_back({id, mesh_.coord(rc.blocks.back().pe)});
    }
    return s;
  }
  double fragmentation() const override {
    std::vector<std::uint64_t> used;
    for (const auto& p : alloc_.pes()) used.push_back(p.capacity - p.free_blocks);
    return fragmentation_ratio(used, alloc_.config().blocks_per_pe);
  }
  std::vector<double> unit_latency(const std::vector<double>& pe_cycles) const override { return pe_cycles; }
  bool fits_ever(std::uint64_t, std::uint64_t final_tokens) const override {
    return SpatialAllocator::blocks_for(final_tokens, alloc_.config().block_size) <= alloc_.total_blocks();
  }
  const SpatialAllocator& allocator() const { return alloc_; }

 private:
  SpatialAllocator alloc_;
  MeshConfig mesh_;
  std::uint64_t committed_ = 0;
  std::map<RequestId, std::uint64_t> commit_;
};

// Each request reserves a full window inside one PE group; its blocks are
// striped over the group's PEs.
class CoarsePolicy final : public KvPolicy {
 public:
  CoarsePolicy(const MeshConfig& mesh, int group_size, std::uint64_t tokens_per_pe, std::uint64_t window,
               std::uint32_t block_size)
      : alloc_(CoarseAllocator::contiguous_groups(mesh.m, group_size), tokens_per_pe, window),
        mesh_(mesh),
        b_(block_size) {}

  bool admit(RequestId id, std::uint64_t prompt, std::uint64_t final_tokens) override {
    if (final_tokens > alloc_.window()) return false;
    auto g = alloc_.allocate(id, prompt);
    if (!g) return false;
    tokens_[id] = prompt;
    return true;
  }
  void grow(RequestId id) override {
    if (!alloc_.grow(id, 1)) throw std::logic_error("coarse: growth beyond window");
    ++tokens_.at(id);
  }
  void release(RequestId id) override {
    alloc_.free(id);
    tokens_.erase(id);
  }
  BatchState batch_state(const std::vector<RequestId>& batch) const override {
    BatchState s;
    s.pe_tokens.assign(static_cast<std::size_t>(mesh_.pe_count()), 0);
    for (auto id : batch) {
      const auto& pes = alloc_.groups()[static_cast<std::size_t>(alloc_.group_of(id))].pes;
      const std::uint64_t T = tokens_.at(id), n = pes.size();
      const std::uint64_t full = T / b_, rem = T % b_;
      for (std::uint64_t i = 0; i < n; ++i)
        s.pe_tokens[static_cast<std::size_t>(pes[i])] += (full / n + (i < full % n ? 1 : 0)) * b_;
      const std::uint64_t last = rem > 0 ? full % n : (full - 1) % n;
      if (rem > 0) s.pe_tokens[static_cast<std::size_t>(pes[last])] += rem;
      s.targets.push_back({id, mesh_.coord(pes[last])});
    }
    return s;
  }
  double fragmentation() const override {
    std::vector<std::uint64_t> reserved;
    for (const auto& g : alloc_.groups()) reserved.push_back(g.reserved);
    return fragmentation_ratio(reserved, alloc_.groups().front().capacity);
  }
  std::vector<double> unit_latency(const std::vector<double>& pe_cycles) const override {
    std::vector<double> out;
    for (const auto& g : alloc_.groups()) {
      double worst = 0;
      for (int p : g.pes) worst = std::max(worst, pe_cycles[static_cast<std::size_t>(p)]);
      out.push_back(worst);
    }
    return out;
  }
  bool fits_ever(std::uint64_t prompt, std::uint64_t final_tokens) const override {
    return prompt <= alloc_.window() && final_tokens <= alloc_.window() &&
           alloc_.groups().front().capacity >= alloc_.window();
  }

 private:
  CoarseAllocator alloc_;
  MeshConfig mesh_;
  std::uint32_t b_;
  std::map<RequestId, std::uint64_t> tokens_;
};

inline std::unique_ptr<KvPolicy> make_policy(const ServingConfig& sc, const ModelConfig& model, const DeviceConfig& dev,
                                             const WorkloadSpec& wl) {
  if (sc.policy == AllocPolicy::Helios) {
    AllocatorConfig ac;
    ac.m = dev.mesh.m;
    ac.blocks_per_pe = dev.blocks_per_pe;
    ac.block_size = dev.block_size;
    ac.kv_bytes_per_token = kv_bytes_per_token_layer(model, dev);
    return std::make_unique<HeliosPolicy>(ac, dev.mesh);
  }
  const std::uint64_t per_pe = static_cast<std::uint64_t>(dev.blocks_per_pe) * dev.block_size;
  return std::make_unique<CoarsePolicy>(dev.mesh, sc.coarse_group_size, per_pe, wl.max_prompt + wl.max_decode,
                                        dev.block_size);
}

// Prompt KV streamed into the decoding device while its prefill runs.
struct KvStream {
  double start = 0;
  double end = 0;
  double bytes_per_pe = 0;
};

namespace detail {

constexpr double kTransferUnitsPerByte = 64.0;

inline std::vector<TransferSegment> transfer_trace(const IterationReport& rep, const DeviceConfig& dev,
                                                   double arrival_bytes_per_cycle) {
  const double bw = dev.dram_bytes_per_cycle();
  const auto a = static_cast<std::uint64_t>(std::llround(arrival_bytes_per_cycle * kTransferUnitsPerByte));
  std::vector<TransferSegment> one;
  for (const auto& s : rep.timeline) {
    const auto cycles = static_cast<std::uint64_t>(std::llround(s.cycles));
    if (cycles == 0) continue;
    const double used = s.dram_bytes_per_pe / s.cycles;
    const double slack = std::max(0.0, bw - used);
    one.push_back({cycles, a, static_cast<std::uint64_t>(std::floor(slack * kTransferUnitsPerByte))});
  }
  std::vector<TransferSegment> out;
  for (int l = 0; l < rep.layers; ++l) out.insert(out.end(), one.begin(), one.end());
  return out;
}

}  // namespace detail

class ServingSim {
 public:
  ServingSim(ModelConfig model, DeviceConfig dev, WorkloadSpec wl, ServingConfig sc)
      : model_(std::move(model)), dev_(std::move(dev)), wl_(std::move(wl)), sc_(sc), dm_(model_, dev_, sc.seed) {
    sc_.validate();
    policy_ = make_policy(sc_, model_, dev_, wl_);
    tcfg_.buffer = static_cast<std::uint64_t>(dev_.transfer_buffer_bytes * detail::kTransferUnitsPerByte);
    tcfg_.bandwidth = static_cast<std::uint64_t>(dev_.dram_bytes_per_cycle() * detail::kTransferUnitsPerByte);
    tcfg_.setup = static_cast<std::uint64_t>(dev_.burst_setup_cycles);
    tcfg_.min_fraction = dev_.burst_min_fraction;
  }

  ServingMetrics run() { return run(generate_workload(wl_)); }

  void set_alloc_trace(std::vector<AllocEvent>* log) { policy_->set_trace(log); }

  ServingMetrics run(const std::vector<Request>& reqs) {
    ServingMetrics out;
    for (const auto& r : reqs)
      if (!policy_->fits_ever(r.prompt, r.prompt + r.decode))
        throw std::runtime_error("infeasible workload: request " + std::to_string(r.id) + " exceeds device capacity");

    struct Live {
      const Request* req = nullptr;
      double ready = 0;
      double last_emit = 0;
      std::uint64_t emitted = 0;
    };
    const double hz = dev_.frequency_ghz * 1e9;
    const double kv_bytes_token = static_cast<double>(kv_bytes_per_token_layer(model_, dev_)) * model_.layers;
    std::size_t next = 0;  // first request not yet admitted
    std::map<RequestId, Live> live;
    std::vector<KvStream> streams;
    double t = 0, t_prev = 0, prefill_free = 0;
    double imbalance_sum = 0, batch_sum = 0, stall_total = 0, busy_total = 0;
    std::uint64_t measured = 0, measured_tokens = 0;
    AxisTraffic traffic;
    std::uint64_t pending = 0;

    auto measuring = [&](double at) { return at >= sc_.warmup_s; };
    auto done = [&]() { return sc_.horizon_s > 0 && t >= sc_.horizon_s; };

    while (!done()) {
      policy_->set_iteration(out.iterations);
      // FIFO admission at iteration boundaries.
      while (next < reqs.size() && reqs[next].arrival <= t) {
        const auto& r = reqs[next];
        if (!policy_->admit(r.id, r.prompt, r.prompt + r.decode)) break;
        Live l;
        l.req = &r;
        const double admit_at = std::max(r.arrival, t_prev);
        if (sc_.mode == ServeMode::Disaggregated) {
          const double start = std::max(admit_at, prefill_free);
          const double end = start + sc_.prefill.latency(r.prompt);
          prefill_free = end;
          l.ready = end;
          if (end > start)
            streams.push_back({start, end, static_cast<double>(r.prompt) * kv_bytes_token / dev_.pe_count()});
        } else {
          l.ready = admit_at;
        }
        live[r.id] = l;
        ++out.admitted;
        ++next;
      }
      std::vector<RequestId> batch;
      double next_ready = INFINITY;
      for (auto& [id, l] : live) {
        if (l.ready <= t) {
          if (sc_.max_batch == 0 || batch.size() < sc_.max_batch) batch.push_back(id);
        } else {
          next_ready = std::min(next_ready, l.ready);
        }
      }
      if (batch.empty()) {
        double wake = next_ready;
        if (next < reqs.size() && reqs[next].arrival > t) wake = std::min(wake, reqs[next].arrival);
        if (!std::isfinite(wake)) break;
        if (sc_.horizon_s > 0 && wake >= sc_.horizon_s) {
          t = sc_.horizon_s;
          break;
        }
        t_prev = t;
        t = std::max(t, wake);
        continue;
      }

      for (auto id : batch) policy_->grow(id);
      const auto state = policy_->batch_state(batch);
      const auto rep = dm_.iterate(state);
      double cycles = rep.total;

      if (sc_.mode == ServeMode::Disaggregated) {
        const double span = rep.total / hz;
        double bytes = 0;
        for (const auto& s : streams) {
          const double lo = std::max(s.start, t), hi = std::min(s.end, t + span);
          if (hi > lo) bytes += s.bytes_per_pe * (hi - lo) / (s.end - s.start);
        }
        if (bytes > 0 || pending > 0) {
          const auto trace = detail::transfer_trace(rep, dev_, bytes / rep.total);
          const auto tr = prefill_transfer_schedule(trace, tcfg_, pending, false);
          pending = tr.pending;
          cycles += static_cast<double>(tr.stall_cycles);
          if (measuring(t)) stall_total += static_cast<double>(tr.stall_cycles);
        }
        streams.erase(std::remove_if(streams.begin(), streams.end(), [&](const KvStream& s) { return s.end <= t + span; }),
                      streams.end());
      }

      const double start = t;
      t_prev = t;
      t += cycles / hz;
      ++out.iterations;
      if (measuring(start)) {
        ++measured;
        busy_total += rep.total;
        batch_sum += static_cast<double>(batch.size());
        imbalance_sum += imbalance_ratio(policy_->unit_latency(rep.attention_pe_cycles));
        out.peak_fragmentation = std::max(out.peak_fragmentation, policy_->fragmentation());
        traffic.x += rep.traffic.x;
        traffic.y += rep.traffic.y;
      }
      for (auto id : batch) {
        auto& l = live.at(id);
        ++l.emitted;
        ++out.emitted_tokens;
        if (measuring(t)) {
          ++measured_tokens;
          if (l.emitted > 1) out.tokens.push_back({id, t, t - l.last_emit});
        }
        l.last_emit = t;
        if (l.emitted == l.req->decode) {
          policy_->release(id);
          ++out.completed;
          out.completed_decode_tokens += l.req->decode;
          if (measuring(l.req->arrival)) out.e2e.push_back(t - l.req->arrival);
          live.erase(id);
        }
      }
      if (next >= reqs.size() && live.empty()) break;
    }

    out.sim_time = t;
    out.queued_at_end = reqs.size() - next;
    out.in_flight_at_end = live.size();
    for (const auto& [id, l] : live) out.partial_tokens += l.emitted;
    if (!out.tokens.empty()) {
      std::vector<double> tbt;
      tbt.reserve(out.tokens.size());
      double sum = 0;
      for (const auto& s : out.tokens) {
        tbt.push_back(s.tbt);
        sum += s.tbt;
      }
      out.tbt_p50 = percentile(tbt, 50);
      out.tbt_p99 = percentile(tbt, 99);
      out.tbt_mean = sum / static_cast<double>(tbt.size());
    }
    if (!out.e2e.empty()) {
      out.e2e_p50 = percentile(out.e2e, 50);
      out.e2e_p99 = percentile(out.e2e, 99);
    }
    const double window = t - sc_.warmup_s;
    out.throughput = window > 0 ? static_cast<double>(measured_tokens) / window : 0.0;
    out.mean_imbalance = measured ? imbalance_sum / static_cast<double>(measured) : 0.0;
    out.mean_batch = measured ? batch_sum / static_cast<double>(measured) : 0.0;
    out.x_traffic_fraction = traffic.total() ? static_cast<double>(traffic.x) / static_cast<double>(traffic.total()) : 0.0;
    out.non_overlapped_fraction = busy_total > 0 ? stall_total / (busy_total + stall_total) : 0.0;
    return out;
  }

 private:
  ModelConfig model_;
  DeviceConfig dev_;
  WorkloadSpec wl_;
  ServingConfig sc_;
  DecodeModel dm_;
  std::unique_ptr<KvPolicy> policy_;
  TransferConfig tcfg_;
};

inline ServingMetrics run_decode_stress(const ModelConfig& model, const DeviceConfig& dev, const WorkloadSpec& wl,
                                        ServingConfig sc) {
  sc.mode = ServeMode::Stress;
  return ServingSim(model, dev, wl, sc).run();
}

inline ServingMetrics run_disaggregated(const ModelConfig& model, const DeviceConfig& dev, const WorkloadSpec& wl,
                                        ServingConfig sc) {
  sc.mode = ServeMode::Disaggregated;
  return ServingSim(model, dev, wl, sc).run();
}

}  // namespace hbsim
