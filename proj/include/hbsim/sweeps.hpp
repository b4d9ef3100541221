#pragma once

// Parametric design-space sweeps: PE granularity, KV block size and DRAM
// channel count. Points are independent and may run on several threads;
// results land in fixed slots so output order never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hbsim/device_model.hpp"
#include "hbsim/serving.hpp"

namespace hbsim {

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// Device for a model at desk or paper scale.
inline DeviceConfig device_for_model(const ModelConfig& m) {
  return m.name == "desk-gqa" ? presets::desk_device() : presets::device_for(m);
}

// ---- PE granularity ----

enum class NocScaling { FixedBisection, FixedLink };

inline const char* to_string(NocScaling s) { return s == NocScaling::FixedBisection ? "fixed_bisection" : "fixed_link"; }
inline NocScaling noc_scaling_from(const std::string& s) {
  if (s == "fixed_bisection") return NocScaling::FixedBisection;
  if (s == "fixed_link") return NocScaling::FixedLink;
  throw std::invalid_argument("unknown noc scaling: " + s);
}

// Same device totals spread over an m x m array. Per-PE MAC, vector rate,
// buffers and blocks shrink with the PE count; banks per PE follow from the
// fixed bank total, so the bank penalty moves with m.
inline DeviceConfig rescale_array(const DeviceConfig& base, int m, NocScaling noc) {
  DeviceConfig d = base;
  const double f = static_cast<double>(base.pe_count()) / (static_cast<double>(m) * m);
  d.mesh.m = m;
  d.mac_flops_per_cycle *= f;
  d.vector_ops_per_cycle *= f;
  d.compute_buffer_bytes *= f;
  d.transfer_buffer_bytes *= f;
  d.blocks_per_pe = static_cast<std::uint32_t>(std::max(1.0, std::floor(base.blocks_per_pe * f)));
  // Link width tracks the PE edge so the bisection stays constant.
  if (noc == NocScaling::FixedBisection) d.mesh.link_bandwidth *= static_cast<double>(base.mesh.m) / m;
  return d;
}

struct GranularitySpec {
  std::vector<std::string> models{"opt-66b", "llama3-70b", "mixtral-8x22b", "qwen3-30b-a3b", "deepseek-236b"};
  std::vector<int> sizes{1, 2, 4, 8, 16};
  int reference = 4;
  std::uint64_t batch = 16;
  std::uint64_t ctx_len = 4096;
  NocScaling noc = NocScaling::FixedBisection;
};

struct GranularityRow {
  std::string model;
  int m = 0;
  double banks_per_pe = 0;
  double bank_efficiency = 0;
  double compute = 0, intra = 0, inter = 0, total = 0;
  double normalized = 0;  // total / total at the reference size
};

inline std::vector<GranularityRow> sweep_pe_granularity(const GranularitySpec& spec, int jobs = 1) {
  if (std::find(spec.sizes.begin(), spec.sizes.end(), spec.reference) == spec.sizes.end())
    throw std::invalid_argument("granularity sweep: reference size not in grid");
  std::vector<GranularityRow> rows(spec.models.size() * spec.sizes.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    const auto model = presets::model(spec.models[i / spec.sizes.size()]);
    const int m = spec.sizes[i % spec.sizes.size()];
    const auto dev = rescale_array(device_for_model(model), m, spec.noc);
    dev.validate();
    const auto rep = decode_iteration_latency(model, place_batch(spec.batch, spec.ctx_len, model, dev), dev);
    auto& r = rows[i];
    r.model = model.name;
    r.m = m;
    r.banks_per_pe = dev.banks_per_pe();
    r.bank_efficiency = dev.bank_efficiency();
    r.compute = rep.compute;
    r.intra = rep.intra;
    r.inter = rep.inter;
    r.total = rep.total;
  });
  for (std::size_t mi = 0; mi < spec.models.size(); ++mi) {
    double ref = 0;
    for (std::size_t k = 0; k < spec.sizes.size(); ++k)
      if (spec.sizes[k] == spec.reference) ref = rows[mi * spec.sizes.size() + k].total;
    for (std::size_t k = 0; k < spec.sizes.size(); ++k) rows[mi * spec.sizes.size() + k].normalized = rows[mi * spec.sizes.size() + k].total / ref;
  }
  return rows;
}

// ---- KV block size ----

struct BlockSizeSpec {
  std::vector<std::uint32_t> block_sizes{4, 16, 64, 256, 1024};
  std::vector<double> rates{1000, 30000};
  std::vector<std::uint64_t> seeds{1};
  std::vector<AllocPolicy> policies{AllocPolicy::Helios, AllocPolicy::Coarse};
};

struct BlockSizeRow {
  std::uint32_t block_size = 0;
  std::string policy;
  double rate = 0;
  std::uint64_t seed = 0;
  double peak_fragmentation = 0, mean_imbalance = 0;
  double tbt_p50 = 0, tbt_p99 = 0, throughput = 0;
};

// Per-PE token capacity stays fixed while the block size moves.
inline std::vector<BlockSizeRow> sweep_block_size(const BlockSizeSpec& spec, const ModelConfig& model,
                                                  const DeviceConfig& base, const WorkloadSpec& wl,
                                                  const ServingConfig& sc, int jobs = 1) {
  const std::uint64_t tokens_per_pe = static_cast<std::uint64_t>(base.blocks_per_pe) * base.block_size;
  const std::size_t nb = spec.block_sizes.size(), np = spec.policies.size(), nr = spec.rates.size(),
                    ns = spec.seeds.size();
  std::vector<BlockSizeRow> rows(nb * np * nr * ns);
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    const std::size_t s = i % ns, r = (i / ns) % nr, p = (i / ns / nr) % np, b = i / ns / nr / np;
    DeviceConfig dev = base;
    dev.block_size = spec.block_sizes[b];
    if (tokens_per_pe % dev.block_size != 0) throw std::invalid_argument("block sweep: block size must divide PE capacity");
    dev.blocks_per_pe = static_cast<std::uint32_t>(tokens_per_pe / dev.block_size);
    WorkloadSpec w = wl;
    w.rate = spec.rates[r];
    w.seed = spec.seeds[s];
    ServingConfig c = sc;
    c.policy = spec.policies[p];
    const auto met = ServingSim(model, dev, w, c).run();
    auto& row = rows[i];
    row.block_size = dev.block_size;
    row.policy = to_string(c.policy);
    row.rate = w.rate;
    row.seed = w.seed;
    row.peak_fragmentation = met.peak_fragmentation;
    row.mean_imbalance = met.mean_imbalance;
    row.tbt_p50 = met.tbt_p50;
    row.tbt_p99 = met.tbt_p99;
    row.throughput = met.throughput;
  });
  return rows;
}

// ---- DRAM channels vs compute ----

struct ChannelSpec {
  std::vector<int> channels{4, 8, 16, 32, 64};
  int reference = 16;
  // Allocable compute relative to the reference channel count: controller
  // area and DRAM power eat into the thermal budget. Calibration knob.
  std::map<int, double> compute_scale{{4, 1.08}, {8, 1.05}, {16, 1.0}, {32, 0.62}, {64, 0.3}};
  std::vector<std::string> models{"llama3-70b", "qwen3-30b-a3b"};
  std::vector<std::uint64_t> batches{1, 8, 32, 64};
  std::vector<std::uint64_t> ctx_lens{4096, 16384, 65536, 131072};
};

struct ChannelRow {
  int channels = 0;
  std::string model;  // "mean" for the per-channel summary row
  std::uint64_t batch = 0;
  std::uint64_t ctx_len = 0;
  double compute_scale = 0;
  double total = 0;       // cycles, 0 when the point does not fit
  bool fits = false;
  double performance = 0;  // reference latency / latency
};

inline DeviceConfig rescale_channels(const DeviceConfig& base, int channels, int reference, double compute_scale) {
  DeviceConfig d = base;
  const double f = static_cast<double>(channels) / reference;
  d.bank_bytes_per_cycle *= f;
  d.mac_flops_per_cycle *= compute_scale;
  d.vector_ops_per_cycle *= compute_scale;
  return d;
}

inline std::vector<ChannelRow> sweep_channels(const ChannelSpec& spec, int jobs = 1) {
  for (int c : spec.channels)
    if (!spec.compute_scale.count(c)) throw std::invalid_argument("channel sweep: no compute scale for " + std::to_string(c));
  if (!spec.compute_scale.count(spec.reference)) throw std::invalid_argument("channel sweep: reference missing");
  const std::size_t per = spec.models.size() * spec.batches.size() * spec.ctx_lens.size();
  const std::size_t nc = spec.channels.size();
  // Reference latencies first, then every channel count.
  std::vector<ChannelRow> ref(per), pts(per * nc);
  auto eval = [&](int ch, std::size_t k, ChannelRow& row) {
    const std::size_t nx = spec.ctx_lens.size(), nbt = spec.batches.size();
    const auto model = presets::model(spec.models[k / (nbt * nx)]);
    row.channels = ch;
    row.model = model.name;
    row.batch = spec.batches[(k / nx) % nbt];
    row.ctx_len = spec.ctx_lens[k % nx];
    row.compute_scale = spec.compute_scale.at(ch);
    const auto dev = rescale_channels(device_for_model(model), ch, spec.reference, row.compute_scale);
    try {
      const auto batch = place_batch(row.batch, row.ctx_len, model, dev);
      row.total = decode_iteration_latency(model, batch, dev).total;
      row.fits = true;
    } catch (const std::runtime_error&) {
      row.fits = false;  // out of KV capacity
    }
  };
  parallel_for(per, jobs, [&](std::size_t k) { eval(spec.reference, k, ref[k]); });
  parallel_for(pts.size(), jobs, [&](std::size_t i) { eval(spec.channels[i / per], i % per, pts[i]); });
  std::vector<ChannelRow> out;
  for (std::size_t c = 0; c < nc; ++c) {
    double sum = 0;
    int count = 0;
    for (std::size_t k = 0; k < per; ++k) {
      auto row = pts[c * per + k];
      if (row.fits && ref[k].fits) {
        row.performance = ref[k].total / row.total;
        sum += row.performance;
        ++count;
      }
      out.push_back(row);
    }
    ChannelRow mean;
    mean.channels = spec.channels[c];
    mean.model = "mean";
    mean.compute_scale = spec.compute_scale.at(spec.channels[c]);
    mean.fits = count > 0;
    mean.performance = count ? sum / count : 0.0;
    out.push_back(mean);
  }
  return out;
}

}  // namespace hbsim
