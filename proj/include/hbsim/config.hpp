#pragma once

// Run configuration: one JSON tree, strict schema (unknown keys are errors),
// named presets for the shipped setups. serialize() writes every field, so
// parse(serialize(c)) reproduces c.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbsim/device_config.hpp"
#include "hbsim/numerics_validation.hpp"
#include "hbsim/serving.hpp"
#include "hbsim/sweeps.hpp"
#include "hbsim/workload.hpp"

namespace hbsim {

using Json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimulateSpec {
  std::vector<std::uint64_t> batches{1, 4, 16, 64};
  std::vector<std::uint64_t> ctx_lens{1024, 4096, 16384};
};

struct AllocTraceSpec {
  std::uint64_t requests = 200;  // overrides workload.requests for the trace run
};

struct RunConfig {
  std::string name = "desk-stress";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  ModelConfig model = presets::desk_gqa();
  DeviceConfig device = presets::desk_device();
  WorkloadSpec workload{.rate = 20000.0, .requests = 2000};
  ServingConfig serving;
  SimulateSpec simulate;
  GranularitySpec granularity;
  BlockSizeSpec block_sweep;
  ChannelSpec channel_sweep;
  NumericsOptions numerics;
  AllocTraceSpec alloc_trace;

  // Seed fans out to every seeded component.
  void apply_seed(std::uint64_t s) {
    seed = s;
    workload.seed = s;
    serving.seed = s;
    numerics.seed = s;
  }

  void validate() const {
    model.validate();
    device.validate();
    workload.validate();
    serving.validate();
    NumericsValidator check(numerics);
    (void)check;
    if (simulate.batches.empty() || simulate.ctx_lens.empty()) throw ConfigError("simulate: grid must not be empty");
    for (auto b : simulate.batches)
      if (b == 0) throw ConfigError("simulate: batch must be > 0");
    for (auto c : simulate.ctx_lens)
      if (c == 0) throw ConfigError("simulate: ctx_len must be > 0");
    for (int m : granularity.sizes)
      if (m < 1) throw ConfigError("sweep.granularity: sizes must be >= 1");
    for (const auto& n : granularity.models) presets::model(n);
    for (const auto& n : channel_sweep.models) presets::model(n);
    for (auto b : block_sweep.block_sizes)
      if (b == 0) throw ConfigError("sweep.block_size: block sizes must be > 0");
    if (alloc_trace.requests == 0) throw ConfigError("alloc_trace: requests must be > 0");
  }
};

namespace config_detail {

// Object reader that remembers which keys were consumed.
class Obj {
 public:
  Obj(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* k) const { return j_.contains(k); }

  template <typename T>
  void get(const char* k, T& out) {
    if (!j_.contains(k)) return;
    seen_.insert(k);
    read(j_.at(k), sub(k), out);
  }

  const Json& raw(const char* k) {
    seen_.insert(k);
    return j_.at(k);
  }

  std::string sub(const char* k) const { return path_.empty() ? k : path_ + "." + k; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key: " + sub(it.key().c_str()));
  }

  static void read(const Json& v, const std::string& p, double& out) {
    if (!v.is_number()) throw ConfigError(p + ": expected a number");
    out = v.get<double>();
  }
  static void read(const Json& v, const std::string& p, int& out) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    out = v.get<int>();
  }
  static void read(const Json& v, const std::string& p, std::uint32_t& out) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(p + ": expected a non-negative integer");
    out = v.get<std::uint32_t>();
  }
  static void read(const Json& v, const std::string& p, std::uint64_t& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(p + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const Json& v, const std::string& p, bool& out) {
    if (!v.is_boolean()) throw ConfigError(p + ": expected true/false");
    out = v.get<bool>();
  }
  static void read(const Json& v, const std::string& p, std::string& out) {
    if (!v.is_string()) throw ConfigError(p + ": expected a string");
    out = v.get<std::string>();
  }
  template <typename T>
  static void read(const Json& v, const std::string& p, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      read(v[i], p + "[" + std::to_string(i) + "]", x);
      out.push_back(x);
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Enum stored as its string name.
template <typename E, typename From>
void get_enum(Obj& o, const char* k, E& out, From from) {
  std::string s;
  o.get(k, s);
  if (!s.empty()) {
    try {
      out = from(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(o.sub(k) + ": " + e.what());
    }
  }
}

inline void read_mesh(const Json& j, const std::string& p, MeshConfig& m) {
  Obj o(j, p);
  o.get("m", m.m);
  o.get("link_bandwidth", m.link_bandwidth);
  o.get("hop_latency", m.hop_latency);
  o.finish();
}

inline void read_energy(const Json& j, const std::string& p, EnergyConfig& e) {
  Obj o(j, p);
  o.get("flop_pj", e.flop_pj);
  o.get("dram_bit_pj", e.dram_bit_pj);
  o.get("sram_bit_pj", e.sram_bit_pj);
  o.get("noc_bit_hop_pj", e.noc_bit_hop_pj);
  o.get("link_bit_pj", e.link_bit_pj);
  o.finish();
}

inline void read_model(const Json& j, ModelConfig& m) {
  if (j.is_string()) {
    m = presets::model(j.get<std::string>());
    return;
  }
  Obj o(j, "model");
  if (o.has("preset")) {
    std::string p;
    o.get("preset", p);
    try {
      m = presets::model(p);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("model.preset: ") + e.what());
    }
  }
  o.get("name", m.name);
  o.get("layers", m.layers);
  o.get("hidden", m.hidden);
  o.get("intermediate", m.intermediate);
  o.get("q_heads", m.q_heads);
  o.get("kv_heads", m.kv_heads);
  o.get("head_dim", m.head_dim);
  get_enum(o, "attention", m.attention, attention_kind_from);
  get_enum(o, "ffn", m.ffn, ffn_kind_from);
  o.get("experts", m.experts);
  o.get("top_k", m.top_k);
  get_enum(o, "norm", m.norm, norm_kind_from);
  o.get("bytes_per_elem", m.bytes_per_elem);
  if (o.has("mla")) {
    Obj mo(o.raw("mla"), "model.mla");
    mo.get("q_latent", m.mla.q_latent);
    mo.get("kv_latent", m.mla.kv_latent);
    mo.get("rope", m.mla.rope);
    mo.get("nope", m.mla.nope);
    mo.get("v_head", m.mla.v_head);
    mo.finish();
  }
  o.finish();
}

// Device presets: "desk" (single device) or "paper" (TP/EP per model).
inline DeviceConfig device_preset(const std::string& p, const ModelConfig& m) {
  if (p == "desk") return presets::desk_device();
  if (p == "paper") return presets::device_for(m);
  throw ConfigError("device.preset: unknown preset " + p + " (desk, paper)");
}

inline void read_device(const Json& j, const ModelConfig& model, DeviceConfig& d) {
  Obj o(j, "device");
  if (o.has("preset")) {
    std::string p;
    o.get("preset", p);
    d = device_preset(p, model);
  }
  if (o.has("mesh")) read_mesh(o.raw("mesh"), "device.mesh", d.mesh);
  o.get("frequency_ghz", d.frequency_ghz);
  o.get("dram_dies", d.dram_dies);
  o.get("banks_per_die", d.banks_per_die);
  o.get("bank_bytes_per_cycle", d.bank_bytes_per_cycle);
  o.get("bank_penalty_slope", d.bank_penalty_slope);
  o.get("bank_penalty_reference", d.bank_penalty_reference);
  o.get("bank_penalty_floor", d.bank_penalty_floor);
  o.get("mac_flops_per_cycle", d.mac_flops_per_cycle);
  o.get("vector_ops_per_cycle", d.vector_ops_per_cycle);
  o.get("compute_buffer_bytes", d.compute_buffer_bytes);
  o.get("transfer_buffer_bytes", d.transfer_buffer_bytes);
  o.get("blocks_per_pe", d.blocks_per_pe);
  o.get("block_size", d.block_size);
  o.get("fc_setup_cycles", d.fc_setup_cycles);
  o.get("tp", d.tp);
  o.get("ep", d.ep);
  o.get("inter_device_bytes_per_cycle", d.inter_device_bytes_per_cycle);
  o.get("burst_setup_cycles", d.burst_setup_cycles);
  o.get("burst_min_fraction", d.burst_min_fraction);
  if (o.has("energy")) read_energy(o.raw("energy"), "device.energy", d.energy);
  o.finish();
}

inline void read_length(const Json& j, const std::string& p, LengthDist& d) {
  Obj o(j, p);
  o.get("mean", d.mean);
  o.get("sigma", d.sigma);
  o.finish();
}

inline void read_workload(const Json& j, WorkloadSpec& w) {
  Obj o(j, "workload");
  o.get("rate", w.rate);
  o.get("requests", w.requests);
  get_enum(o, "distribution", w.kind, length_kind_from);
  if (o.has("prompt")) read_length(o.raw("prompt"), "workload.prompt", w.prompt);
  if (o.has("decode")) read_length(o.raw("decode"), "workload.decode", w.decode);
  o.get("max_prompt", w.max_prompt);
  o.get("max_decode", w.max_decode);
  o.get("trace_file", w.trace_file);
  o.finish();
}

inline void read_serving(const Json& j, ServingConfig& s) {
  Obj o(j, "serving");
  get_enum(o, "mode", s.mode, serve_mode_from);
  get_enum(o, "policy", s.policy, alloc_policy_from);
  o.get("coarse_group_size", s.coarse_group_size);
  o.get("horizon_s", s.horizon_s);
  o.get("warmup_s", s.warmup_s);
  o.get("max_batch", s.max_batch);
  if (o.has("prefill")) {
    Obj p(o.raw("prefill"), "serving.prefill");
    p.get("base_s", s.prefill.base_s);
    p.get("tokens_per_s", s.prefill.tokens_per_s);
    p.finish();
  }
  o.finish();
}

inline void read_sweep(const Json& j, RunConfig& c) {
  Obj o(j, "sweep");
  if (o.has("granularity")) {
    Obj g(o.raw("granularity"), "sweep.granularity");
    g.get("models", c.granularity.models);
    g.get("sizes", c.granularity.sizes);
    g.get("reference", c.granularity.reference);
    g.get("batch", c.granularity.batch);
    g.get("ctx_len", c.granularity.ctx_len);
    get_enum(g, "noc_scaling", c.granularity.noc, noc_scaling_from);
    g.finish();
  }
  if (o.has("block_size")) {
    Obj b(o.raw("block_size"), "sweep.block_size");
    b.get("block_sizes", c.block_sweep.block_sizes);
    b.get("rates", c.block_sweep.rates);
    b.get("seeds", c.block_sweep.seeds);
    if (b.has("policies")) {
      std::vector<std::string> ps;
      b.get("policies", ps);
      c.block_sweep.policies.clear();
      for (const auto& p : ps) {
        try {
          c.block_sweep.policies.push_back(alloc_policy_from(p));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("sweep.block_size.policies: ") + e.what());
        }
      }
    }
    b.finish();
  }
  if (o.has("channels")) {
    Obj ch(o.raw("channels"), "sweep.channels");
    ch.get("channels", c.channel_sweep.channels);
    ch.get("reference", c.channel_sweep.reference);
    ch.get("models", c.channel_sweep.models);
    ch.get("batches", c.channel_sweep.batches);
    ch.get("ctx_lens", c.channel_sweep.ctx_lens);
    if (ch.has("compute_scale")) {
      const Json& cs = ch.raw("compute_scale");
      if (!cs.is_object()) throw ConfigError("sweep.channels.compute_scale: expected an object");
      c.channel_sweep.compute_scale.clear();
      for (auto it = cs.begin(); it != cs.end(); ++it) {
        int key = 0;
        try {
          std::size_t used = 0;
          key = std::stoi(it.key(), &used);
          if (used != it.key().size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ConfigError("sweep.channels.compute_scale: key " + it.key() + " is not a channel count");
        }
        double v = 0;
        Obj::read(it.value(), "sweep.channels.compute_scale." + it.key(), v);
        c.channel_sweep.compute_scale[key] = v;
      }
    }
    ch.finish();
  }
  o.finish();
}

inline void read_numerics(const Json& j, NumericsOptions& n) {
  Obj o(j, "numerics");
  o.get("case_scale", n.case_scale);
  o.get("fault", n.fault);
  if (o.has("tolerance")) {
    const Json& t = o.raw("tolerance");
    if (!t.is_object()) throw ConfigError("numerics.tolerance: expected an object");
    n.tolerance.clear();
    for (auto it = t.begin(); it != t.end(); ++it) {
      double v = 0;
      Obj::read(it.value(), "numerics.tolerance." + it.key(), v);
      n.tolerance[it.key()] = v;
    }
  }
  o.finish();
}

}  // namespace config_detail

namespace presets {

inline std::vector<std::string> run_names() {
  return {"desk-stress",    "desk-stress-16k", "desk-disaggregated", "opt-66b",
          "llama3-70b",     "mixtral-8x22b",   "qwen3-30b-a3b",      "deepseek-236b"};
}

inline RunConfig run(const std::string& name) {
  RunConfig c;
  c.name = name;
  if (name == "desk-stress") return c;
  if (name == "desk-stress-16k") {
    c.workload.max_prompt = 16384;
    c.workload.max_decode = 512;
    c.workload.prompt.mean = 1600;
    c.workload.decode.mean = 64;
    return c;
  }
  if (name == "desk-disaggregated") {
    c.serving.mode = ServeMode::Disaggregated;
    c.serving.prefill = {0.001, 2e6};
    c.workload.rate = 1000;
    return c;
  }
  for (const auto& m : model_names()) {
    if (m == name && m != "desk-gqa") {
      c.model = model(m);
      c.device = device_for(c.model);
      c.simulate.batches = {1, 8, 32, 64};
      c.simulate.ctx_lens = {4096, 16384};
      return c;
    }
  }
  throw std::invalid_argument("unknown run preset: " + name);
}

}  // namespace presets

inline RunConfig parse_config(const Json& j) {
  using namespace config_detail;
  RunConfig c;
  Obj o(j, "");
  if (o.has("preset")) {
    std::string p;
    o.get("preset", p);
    try {
      c = presets::run(p);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("preset: ") + e.what());
    }
  }
  o.get("name", c.name);
  if (o.has("model")) {
    read_model(o.raw("model"), c.model);
    // A model change without a device section picks the matching device.
    if (!o.has("device")) c.device = device_for_model(c.model);
  }
  if (o.has("device")) read_device(o.raw("device"), c.model, c.device);
  if (o.has("workload")) read_workload(o.raw("workload"), c.workload);
  if (o.has("serving")) read_serving(o.raw("serving"), c.serving);
  if (o.has("simulate")) {
    Obj s(o.raw("simulate"), "simulate");
    s.get("batches", c.simulate.batches);
    s.get("ctx_lens", c.simulate.ctx_lens);
    s.finish();
  }
  if (o.has("sweep")) read_sweep(o.raw("sweep"), c);
  if (o.has("numerics")) read_numerics(o.raw("numerics"), c.numerics);
  if (o.has("alloc_trace")) {
    Obj a(o.raw("alloc_trace"), "alloc_trace");
    a.get("requests", c.alloc_trace.requests);
    a.finish();
  }
  o.get("output_dir", c.output_dir);
  std::uint64_t seed = c.seed;
  o.get("seed", seed);
  o.finish();
  c.apply_seed(seed);
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline Json serialize(const RunConfig& c) {
  Json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& m = c.model;
  j["model"] = {{"name", m.name},         {"layers", m.layers},
                {"hidden", m.hidden},     {"intermediate", m.intermediate},
                {"q_heads", m.q_heads},   {"kv_heads", m.kv_heads},
                {"head_dim", m.head_dim}, {"attention", to_string(m.attention)},
                {"ffn", to_string(m.ffn)}, {"experts", m.experts},
                {"top_k", m.top_k},       {"norm", to_string(m.norm)},
                {"bytes_per_elem", m.bytes_per_elem},
                {"mla",
                 {{"q_latent", m.mla.q_latent},
                  {"kv_latent", m.mla.kv_latent},
                  {"rope", m.mla.rope},
                  {"nope", m.mla.nope},
                  {"v_head", m.mla.v_head}}}};
  const auto& d = c.device;
  j["device"] = {{"mesh", {{"m", d.mesh.m}, {"link_bandwidth", d.mesh.link_bandwidth}, {"hop_latency", d.mesh.hop_latency}}},
                 {"frequency_ghz", d.frequency_ghz},
                 {"dram_dies", d.dram_dies},
                 {"banks_per_die", d.banks_per_die},
                 {"bank_bytes_per_cycle", d.bank_bytes_per_cycle},
                 {"bank_penalty_slope", d.bank_penalty_slope},
                 {"bank_penalty_reference", d.bank_penalty_reference},
                 {"bank_penalty_floor", d.bank_penalty_floor},
                 {"mac_flops_per_cycle", d.mac_flops_per_cycle},
                 {"vector_ops_per_cycle", d.vector_ops_per_cycle},
                 {"compute_buffer_bytes", d.compute_buffer_bytes},
                 {"transfer_buffer_bytes", d.transfer_buffer_bytes},
                 {"blocks_per_pe", d.blocks_per_pe},
                 {"block_size", d.block_size},
                 {"fc_setup_cycles", d.fc_setup_cycles},
                 {"tp", d.tp},
                 {"ep", d.ep},
                 {"inter_device_bytes_per_cycle", d.inter_device_bytes_per_cycle},
                 {"burst_setup_cycles", d.burst_setup_cycles},
                 {"burst_min_fraction", d.burst_min_fraction},
                 {"energy",
                  {{"flop_pj", d.energy.flop_pj},
                   {"dram_bit_pj", d.energy.dram_bit_pj},
                   {"sram_bit_pj", d.energy.sram_bit_pj},
                   {"noc_bit_hop_pj", d.energy.noc_bit_hop_pj},
                   {"link_bit_pj", d.energy.link_bit_pj}}}};
  const auto& w = c.workload;
  j["workload"] = {{"rate", w.rate},
                   {"requests", w.requests},
                   {"distribution", to_string(w.kind)},
                   {"prompt", {{"mean", w.prompt.mean}, {"sigma", w.prompt.sigma}}},
                   {"decode", {{"mean", w.decode.mean}, {"sigma", w.decode.sigma}}},
                   {"max_prompt", w.max_prompt},
                   {"max_decode", w.max_decode},
                   {"trace_file", w.trace_file}};
  const auto& s = c.serving;
  j["serving"] = {{"mode", to_string(s.mode)},
                  {"policy", to_string(s.policy)},
                  {"coarse_group_size", s.coarse_group_size},
                  {"horizon_s", s.horizon_s},
                  {"warmup_s", s.warmup_s},
                  {"max_batch", s.max_batch},
                  {"prefill", {{"base_s", s.prefill.base_s}, {"tokens_per_s", s.prefill.tokens_per_s}}}};
  j["simulate"] = {{"batches", c.simulate.batches}, {"ctx_lens", c.simulate.ctx_lens}};
  std::vector<std::string> pols;
  for (auto p : c.block_sweep.policies) pols.push_back(to_string(p));
  Json cs = Json::object();
  for (const auto& [k, v] : c.channel_sweep.compute_scale) cs[std::to_string(k)] = v;
  j["sweep"] = {{"granularity",
                 {{"models", c.granularity.models},
                  {"sizes", c.granularity.sizes},
                  {"reference", c.granularity.reference},
                  {"batch", c.granularity.batch},
                  {"ctx_len", c.granularity.ctx_len},
                  {"noc_scaling", to_string(c.granularity.noc)}}},
                {"block_size",
                 {{"block_sizes", c.block_sweep.block_sizes},
                  {"rates", c.block_sweep.rates},
                  {"seeds", c.block_sweep.seeds},
                  {"policies", pols}}},
                {"channels",
                 {{"channels", c.channel_sweep.channels},
                  {"reference", c.channel_sweep.reference},
                  {"compute_scale", cs},
                  {"models", c.channel_sweep.models},
                  {"batches", c.channel_sweep.batches},
                  {"ctx_lens", c.channel_sweep.ctx_lens}}}};
  Json tol = Json::object();
  for (const auto& [k, v] : c.numerics.tolerance) tol[k] = v;
  j["numerics"] = {{"case_scale", c.numerics.case_scale}, {"fault", c.numerics.fault}, {"tolerance", tol}};
  j["alloc_trace"] = {{"requests", c.alloc_trace.requests}};
  return j;
}

}  // namespace hbsim
