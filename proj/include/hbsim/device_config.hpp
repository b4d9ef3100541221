#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/mesh.hpp"

namespace hbsim {

struct EnergyConfig {
  double flop_pj = 0.43;
  double dram_bit_pj = 0.66;
  double sram_bit_pj = 0.019;
  double noc_bit_hop_pj = 0.1;  // per bit per link traversal
  double link_bit_pj = 1.3;     // inter-device
};

struct DeviceConfig {
  MeshConfig mesh{4, 64.0, 2.0};
  double frequency_ghz = 1.0;
  int dram_dies = 4;
  int banks_per_die = 256;
  double bank_bytes_per_cycle = 16.0;  // 256 pins x 0.5 Gbps at 1 GHz
  // Effective bandwidth derating: 1 - slope * log2(banks_per_pe / reference_banks), floored.
  double bank_penalty_slope = 0.05;
  double bank_penalty_reference = 4.0;
  double bank_penalty_floor = 0.2;
  double mac_flops_per_cycle = 16384.0;  // 512 FPUs x 16 MACs x 2
  double vector_ops_per_cycle = 1024.0;
  double compute_buffer_bytes = 2.5 * 1024 * 1024;
  double transfer_buffer_bytes = 2.5 * 1024 * 1024;
  std::uint32_t blocks_per_pe = 4096;
  std::uint32_t block_size = 64;
  double fc_setup_cycles = 0.0;  // per GEMM sub-tile
  int tp = 8;
  int ep = 1;
  double inter_device_bytes_per_cycle = 600.0;  // 600 GB/s at 1 GHz
  double burst_setup_cycles = 16.0;             // per prefill KV bulk write
  double burst_min_fraction = 0.125;            // accumulation threshold floor
  EnergyConfig energy;

  int pe_count() const { return mesh.m * mesh.m; }
  double banks_per_pe() const { return static_cast<double>(dram_dies) * banks_per_die / pe_count(); }

  double bank_efficiency() const {
    const double ratio = banks_per_pe() / bank_penalty_reference;
    if (ratio <= 1.0) return 1.0;
    return std::max(bank_penalty_floor, 1.0 - bank_penalty_slope * std::log2(ratio));
  }
  double raw_dram_bytes_per_cycle() const { return banks_per_pe() * bank_bytes_per_cycle; }
  double dram_bytes_per_cycle() const { return raw_dram_bytes_per_cycle() * bank_efficiency(); }

  void validate() const {
    mesh.validate();
    auto pos = [](double v, const char* what) {
      if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument(std::string("device: ") + what + " must be > 0");
    };
    pos(frequency_ghz, "frequency_ghz");
    pos(dram_dies, "dram_dies");
    pos(banks_per_die, "banks_per_die");
    pos(bank_bytes_per_cycle, "bank_bytes_per_cycle");
    pos(mac_flops_per_cycle, "mac_flops_per_cycle");
    pos(vector_ops_per_cycle, "vector_ops_per_cycle");
    pos(compute_buffer_bytes, "compute_buffer_bytes");
    pos(transfer_buffer_bytes, "transfer_buffer_bytes");
    pos(blocks_per_pe, "blocks_per_pe");
    pos(block_size, "block_size");
    pos(tp, "tp");
    pos(ep, "ep");
    pos(inter_device_bytes_per_cycle, "inter_device_bytes_per_cycle");
    pos(bank_penalty_reference, "bank_penalty_reference");
    if (bank_penalty_slope < 0) throw std::invalid_argument("device: bank_penalty_slope must be >= 0");
    if (!(bank_penalty_floor > 0 && bank_penalty_floor <= 1)) throw std::invalid_argument("device: bank_penalty_floor in (0,1]");
    if (fc_setup_cycles < 0 || burst_setup_cycles < 0) throw std::invalid_argument("device: setup cycles must be >= 0");
    if (!(burst_min_fraction > 0 && burst_min_fraction <= 1)) throw std::invalid_argument("device: burst_min_fraction in (0,1]");
    const int total = dram_dies * banks_per_die;
    if (total % pe_count() != 0) throw std::invalid_argument("device: banks must divide evenly over PEs");
  }
};

enum class AttentionKind { MHA, GQA, MQA, MLA };
enum class FfnKind { Plain, GLU };
enum class NormKind { LayerNorm, RMSNorm };

inline const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::MHA: return "MHA";
    case AttentionKind::GQA: return "GQA";
    case AttentionKind::MQA: return "MQA";
    case AttentionKind::MLA: return "MLA";
  }
  return "?";
}
inline const char* to_string(FfnKind k) { return k == FfnKind::GLU ? "GLU" : "plain"; }
inline const char* to_string(NormKind k) { return k == NormKind::RMSNorm ? "RMSNorm" : "LayerNorm"; }

inline AttentionKind attention_kind_from(const std::string& s) {
  if (s == "MHA") return AttentionKind::MHA;
  if (s == "GQA") return AttentionKind::GQA;
  if (s == "MQA") return AttentionKind::MQA;
  if (s == "MLA") return AttentionKind::MLA;
  throw std::invalid_argument("unknown attention kind: " + s);
}
inline FfnKind ffn_kind_from(const std::string& s) {
  if (s == "GLU") return FfnKind::GLU;
  if (s == "plain") return FfnKind::Plain;
  throw std::invalid_argument("unknown ffn kind: " + s);
}
inline NormKind norm_kind_from(const std::string& s) {
  if (s == "RMSNorm") return NormKind::RMSNorm;
  if (s == "LayerNorm") return NormKind::LayerNorm;
  throw std::invalid_argument("unknown norm kind: " + s);
}

struct MlaDims {
  int q_latent = 0;
  int kv_latent = 0;
  int rope = 0;
  int nope = 0;
  int v_head = 0;
};

struct ModelConfig {
  std::string name = "custom";
  int layers = 1;
  int hidden = 1024;
  int intermediate = 4096;
  int q_heads = 16;
  int kv_heads = 16;
  int head_dim = 64;
  AttentionKind attention = AttentionKind::MHA;
  FfnKind ffn = FfnKind::Plain;
  int experts = 0;
  int top_k = 0;
  NormKind norm = NormKind::LayerNorm;
  int bytes_per_elem = 2;
  MlaDims mla;

  bool moe() const { return experts > 0; }

  void validate() const {
    if (layers < 1 || hidden < 1 || intermediate < 1 || q_heads < 1 || kv_heads < 1 || head_dim < 1 || bytes_per_elem < 1)
      throw std::invalid_argument("model " + name + ": dimensions must be positive");
    if (q_heads % kv_heads != 0) throw std::invalid_argument("model " + name + ": q_heads must be divisible by kv_heads");
    if (attention == AttentionKind::MHA && kv_heads != q_heads)
      throw std::invalid_argument("model " + name + ": MHA needs kv_heads == q_heads");
    if (attention == AttentionKind::MQA && kv_heads != 1) throw std::invalid_argument("model " + name + ": MQA needs kv_heads == 1");
    if (attention == AttentionKind::MLA &&
        (mla.q_latent < 1 || mla.kv_latent < 1 || mla.rope < 0 || mla.nope < 1 || mla.v_head < 1))
      throw std::invalid_argument("model " + name + ": MLA needs latent dims");
    if (experts < 0 || top_k < 0 || (experts > 0 && (top_k < 1 || top_k > experts)))
      throw std::invalid_argument("model " + name + ": bad expert config");
  }
};

// Per-device shard under tensor parallelism.
struct ShardDims {
  int q_heads = 0;
  int kv_heads = 0;  // cached KV heads on this device (latent head counts as 1)
  int key_dim = 0;   // cached key width per KV head
  int value_dim = 0; // cached value width per KV head
  int value_compute_dim = 0;  // width of p x V per query head
  int intermediate = 0;
  int experts_local = 0;
};

inline int ceil_div_int(int a, int b) { return (a + b - 1) / b; }

inline ShardDims shard(const ModelConfig& model, const DeviceConfig& dev) {
  ShardDims s;
  s.q_heads = std::max(1, model.q_heads / dev.tp);
  if (model.attention == AttentionKind::MLA) {
    s.kv_heads = 1;
    s.key_dim = model.mla.kv_latent + model.mla.rope;
    s.value_dim = 0;  // values are the cached latent itself
    s.value_compute_dim = model.mla.kv_latent;
  } else {
    s.kv_heads = std::max(1, model.kv_heads / dev.tp);
    s.key_dim = model.head_dim;
    s.value_dim = model.head_dim;
    s.value_compute_dim = model.head_dim;
  }
  s.intermediate = model.moe() ? model.intermediate : std::max(1, ceil_div_int(model.intermediate, dev.tp));
  s.experts_local = model.moe() ? std::max(1, model.experts / dev.ep) : 0;
  return s;
}

// Cached bytes per token on one device (all layers excluded).
inline std::uint64_t kv_bytes_per_token_layer(const ModelConfig& model, const DeviceConfig& dev) {
  auto s = shard(model, dev);
  return static_cast<std::uint64_t>(s.kv_heads) * (s.key_dim + s.value_dim) * model.bytes_per_elem;
}

namespace presets {

inline ModelConfig opt_66b() {
  ModelConfig m;
  m.name = "opt-66b";
  m.layers = 64;
  m.hidden = 9216;
  m.intermediate = 36864;
  m.q_heads = 72;
  m.kv_heads = 72;
  m.head_dim = 128;
  m.attention = AttentionKind::MHA;
  m.ffn = FfnKind::Plain;
  m.norm = NormKind::LayerNorm;
  return m;
}

inline ModelConfig llama3_70b() {
  ModelConfig m;
  m.name = "llama3-70b";
  m.layers = 80;
  m.hidden = 8192;
  m.intermediate = 28672;
  m.q_heads = 64;
  m.kv_heads = 8;
  m.head_dim = 128;
  m.attention = AttentionKind::GQA;
  m.ffn = FfnKind::GLU;
  m.norm = NormKind::RMSNorm;
  return m;
}

inline ModelConfig mixtral_8x22b() {
  ModelConfig m;
  m.name = "mixtral-8x22b";
  m.layers = 56;
  m.hidden = 6144;
  m.intermediate = 16384;
  m.q_heads = 48;
  m.kv_heads = 8;
  m.head_dim = 128;
  m.attention = AttentionKind::GQA;
  m.ffn = FfnKind::GLU;
  m.experts = 8;
  m.top_k = 2;
  m.norm = NormKind::RMSNorm;
  return m;
}

inline ModelConfig qwen3_30b_a3b() {
  ModelConfig m;
  m.name = "qwen3-30b-a3b";
  m.layers = 48;
  m.hidden = 2048;
  m.intermediate = 768;
  m.q_heads = 32;
  m.kv_heads = 4;
  m.head_dim = 128;
  m.attention = AttentionKind::GQA;
  m.ffn = FfnKind::GLU;
  m.experts = 128;
  m.top_k = 8;
  m.norm = NormKind::RMSNorm;
  return m;
}

inline ModelConfig deepseek_236b() {
  ModelConfig m;
  m.name = "deepseek-236b";
  m.layers = 60;
  m.hidden = 5120;
  m.intermediate = 1536;
  m.q_heads = 128;
  m.kv_heads = 128;
  m.head_dim = 128;
  m.attention = AttentionKind::MLA;
  m.ffn = FfnKind::GLU;
  m.experts = 160;
  m.top_k = 8;
  m.norm = NormKind::RMSNorm;
  m.mla = {1536, 512, 64, 128, 128};
  return m;
}

// Scaled-down GQA model for desk-scale serving runs.
inline ModelConfig desk_gqa() {
  ModelConfig m;
  m.name = "desk-gqa";
  m.layers = 4;
  m.hidden = 1024;
  m.intermediate = 4096;
  m.q_heads = 16;
  m.kv_heads = 4;
  m.head_dim = 64;
  m.attention = AttentionKind::GQA;
  m.ffn = FfnKind::GLU;
  m.norm = NormKind::RMSNorm;
  return m;
}

inline std::vector<std::string> model_names() {
  return {"opt-66b", "llama3-70b", "mixtral-8x22b", "qwen3-30b-a3b", "deepseek-236b", "desk-gqa"};
}

inline ModelConfig model(const std::string& name) {
  if (name == "opt-66b") return opt_66b();
  if (name == "llama3-70b") return llama3_70b();
  if (name == "mixtral-8x22b") return mixtral_8x22b();
  if (name == "qwen3-30b-a3b") return qwen3_30b_a3b();
  if (name == "deepseek-236b") return deepseek_236b();
  if (name == "desk-gqa") return desk_gqa();
  throw std::invalid_argument("unknown model preset: " + name);
}

// Device for a model: EP for expert models, TP otherwise.
inline DeviceConfig device_for(const ModelConfig& m) {
  DeviceConfig d;
  d.tp = 8;
  d.ep = m.moe() ? 8 : 1;
  return d;
}

// Single-device desk configuration.
inline DeviceConfig desk_device() {
  DeviceConfig d;
  d.tp = 1;
  d.ep = 1;
  d.blocks_per_pe = 512;
  d.block_size = 64;
  return d;
}

}  // namespace presets

}  // namespace hbsim
