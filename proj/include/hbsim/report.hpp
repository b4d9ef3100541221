#pragma once

// Deterministic CSV / JSON emission. Doubles go through to_chars (shortest
// round-trip form) so reruns produce identical bytes.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "hbsim/device_model.hpp"
#include "hbsim/numerics_validation.hpp"
#include "hbsim/serving.hpp"
#include "hbsim/sweeps.hpp"

namespace hbsim {

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  if (r.ec != std::errc()) throw std::runtime_error("fmt: to_chars failed");
  return std::string(buf, r.ptr);
}
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint32_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
inline std::string fmt(const char* s) { return fmt(std::string(s)); }

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, std::initializer_list<const char*> header) : os_(os), cols_(header.size()) {
    bool first = true;
    for (const char* h : header) {
      os_ << (first ? "" : ",") << h;
      first = false;
    }
    os_ << '\n';
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    if (sizeof...(cells) != cols_) throw std::logic_error("csv: column count mismatch");
    bool first = true;
    ((os_ << (first ? "" : ",") << fmt(cells), first = false), ...);
    os_ << '\n';
  }

 private:
  std::ostream& os_;
  std::size_t cols_;
};

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

inline nlohmann::ordered_json to_json(const IterationReport& r, const DeviceConfig& dev) {
  nlohmann::ordered_json j;
  j["total_cycles"] = r.total;
  j["compute"] = r.compute;
  j["intra_comm"] = r.intra;
  j["inter_comm"] = r.inter;
  j["seconds"] = r.seconds(dev);
  j["layers"] = r.layers;
  j["x_traffic_frac"] = r.x_traffic_fraction();
  auto& e = j["energy_j"];
  e["flop"] = r.energy.flop_j;
  e["dram"] = r.energy.dram_j;
  e["sram"] = r.energy.sram_j;
  e["noc"] = r.energy.noc_j;
  e["link"] = r.energy.link_j;
  e["total"] = r.energy.total();
  auto& flows = j["comm_by_flow"];
  flows = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.comm_by_flow) flows[k] = v;
  auto& ops = j["entries"];
  ops = nlohmann::ordered_json::array();
  for (const auto& en : r.entries) ops.push_back({{"op", en.op}, {"tag", tag_name(en.tag)}, {"flow", en.flow}, {"cycles", en.cycles}});
  return j;
}

inline nlohmann::ordered_json to_json(const ServingMetrics& m) {
  nlohmann::ordered_json j;
  j["tbt_p50_s"] = m.tbt_p50;
  j["tbt_p99_s"] = m.tbt_p99;
  j["tbt_mean_s"] = m.tbt_mean;
  j["e2e_p50_s"] = m.e2e_p50;
  j["e2e_p99_s"] = m.e2e_p99;
  j["throughput_tok_s"] = m.throughput;
  j["peak_fragmentation"] = m.peak_fragmentation;
  j["mean_imbalance"] = m.mean_imbalance;
  j["x_traffic_fraction"] = m.x_traffic_fraction;
  j["non_overlapped_fraction"] = m.non_overlapped_fraction;
  j["mean_batch"] = m.mean_batch;
  j["iterations"] = m.iterations;
  j["admitted"] = m.admitted;
  j["completed"] = m.completed;
  j["queued_at_end"] = m.queued_at_end;
  j["in_flight_at_end"] = m.in_flight_at_end;
  j["emitted_tokens"] = m.emitted_tokens;
  j["completed_decode_tokens"] = m.completed_decode_tokens;
  j["partial_tokens"] = m.partial_tokens;
  j["tbt_samples"] = m.tokens.size();
  j["sim_time_s"] = m.sim_time;
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<SuiteResult>& rs) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rs)
    j.push_back({{"suite", r.name},
                 {"cases", r.cases},
                 {"max_error", r.max_error},
                 {"tolerance", r.tolerance},
                 {"passed", r.passed},
                 {"note", r.note}});
  return j;
}

inline void write_tokens_csv(std::ostream& os, const ServingMetrics& m) {
  CsvWriter w(os, {"request", "time_s", "tbt_s"});
  for (const auto& t : m.tokens) w.row(t.request, t.time, t.tbt);
}

inline void write_granularity_csv(std::ostream& os, const std::vector<GranularityRow>& rows) {
  CsvWriter w(os, {"model", "m", "banks_per_pe", "bank_efficiency", "compute", "intra_comm", "inter_comm",
                   "total_cycles", "normalized"});
  for (const auto& r : rows)
    w.row(r.model, r.m, r.banks_per_pe, r.bank_efficiency, r.compute, r.intra, r.inter, r.total, r.normalized);
}

inline void write_block_size_csv(std::ostream& os, const std::vector<BlockSizeRow>& rows) {
  CsvWriter w(os, {"block_size", "policy", "rate", "seed", "peak_fragmentation", "mean_imbalance", "tbt_p50_s",
                   "tbt_p99_s", "throughput_tok_s"});
  for (const auto& r : rows)
    w.row(r.block_size, r.policy, r.rate, r.seed, r.peak_fragmentation, r.mean_imbalance, r.tbt_p50, r.tbt_p99,
          r.throughput);
}

inline void write_channels_csv(std::ostream& os, const std::vector<ChannelRow>& rows) {
  CsvWriter w(os, {"channels", "model", "batch", "ctx_len", "compute_scale", "total_cycles", "fits", "performance"});
  for (const auto& r : rows) w.row(r.channels, r.model, r.batch, r.ctx_len, r.compute_scale, r.total, r.fits, r.performance);
}

inline void write_alloc_trace_csv(std::ostream& os, const std::vector<AllocEvent>& log) {
  CsvWriter w(os, {"step", "iteration", "event", "request", "block", "pe", "x", "y", "tokens", "last", "t_sum",
                   "d_l1", "n_last", "l_mst_x", "l_mst_y", "free_blocks", "freed"});
  std::uint64_t step = 0;
  for (const auto& e : log) {
    if (e.step) {
      const auto& s = *e.step;
      w.row(step++, e.iteration, e.kind, e.request, s.local, s.pe, s.keys.coord.x, s.keys.coord.y, s.tokens, s.last,
            s.keys.t_sum, s.keys.d_l1, s.keys.n_last, s.keys.l_mst_x, s.keys.l_mst_y, s.keys.free_blocks,
            std::uint64_t{0});
    } else {
      w.row(step++, e.iteration, e.kind, e.request, "", "", "", "", "", "", "", "", "", "", "", "",
            static_cast<std::uint64_t>(e.freed));
    }
  }
}

}  // namespace hbsim
