#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbsim {

enum class LengthKind { Fixed, Lognormal, Trace };

inline const char* to_string(LengthKind k) {
  switch (k) {
    case LengthKind::Fixed: return "fixed";
    case LengthKind::Lognormal: return "lognormal";
    case LengthKind::Trace: return "trace";
  }
  return "?";
}
inline LengthKind length_kind_from(const std::string& s) {
  if (s == "fixed") return LengthKind::Fixed;
  if (s == "lognormal") return LengthKind::Lognormal;
  if (s == "trace") return LengthKind::Trace;
  throw std::invalid_argument("unknown length distribution: " + s);
}

struct LengthDist {
  double mean = 512;    // lognormal mean, or the fixed length
  double sigma = 1.0;   // lognormal shape
};

struct WorkloadSpec {
  double rate = 100.0;  // requests per second
  std::uint64_t requests = 1000;
  LengthKind kind = LengthKind::Lognormal;
  LengthDist prompt{800, 1.0};
  LengthDist decode{32, 1.0};
  std::uint64_t max_prompt = 8192;
  std::uint64_t max_decode = 256;
  std::string trace_file;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(rate > 0) || !std::isfinite(rate)) throw std::invalid_argument("workload: rate must be > 0");
    if (requests == 0) throw std::invalid_argument("workload: requests must be > 0");
    if (max_prompt == 0 || max_decode == 0) throw std::invalid_argument("workload: caps must be > 0");
    if (kind != LengthKind::Trace) {
      if (!(prompt.mean >= 1) || !(decode.mean >= 1)) throw std::invalid_argument("workload: mean lengths must be >= 1");
      if (prompt.sigma < 0 || decode.sigma < 0) throw std::invalid_argument("workload: sigma must be >= 0");
    } else if (trace_file.empty()) {
      throw std::invalid_argument("workload: trace distribution needs trace_file");
    }
  }
};

struct Request {
  std::uint64_t id = 0;
  double arrival = 0;  // seconds
  std::uint64_t prompt = 1;
  std::uint64_t decode = 1;
};

struct TraceRow {
  std::uint64_t prompt = 0;
  std::uint64_t decode = 0;
  bool has_arrival = false;
  double arrival = 0;
};

// CSV: prompt_tokens,decode_tokens[,arrival_s]; optional header line.
inline std::vector<TraceRow> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace file: " + path);
  std::vector<TraceRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (n == 1 && line.find("prompt") != std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2 || cells.size() > 3)
      throw std::runtime_error(path + ":" + std::to_string(n) + ": expected 2 or 3 columns");
    try {
      TraceRow r;
      r.prompt = std::stoull(cells[0]);
      r.decode = std::stoull(cells[1]);
      if (cells.size() == 3) {
        r.has_arrival = true;
        r.arrival = std::stod(cells[2]);
      }
      if (r.prompt == 0 || r.decode == 0) throw std::invalid_argument("zero length");
      rows.push_back(r);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": bad row");
    }
  }
  if (rows.empty()) throw std::runtime_error("trace file has no rows: " + path);
  return rows;
}

inline std::uint64_t clamp_length(double v, std::uint64_t cap) {
  const double r = std::round(v);
  if (!(r >= 1)) return 1;
  if (r >= static_cast<double>(cap)) return cap;
  return static_cast<std::uint64_t>(r);
}

// Poisson arrivals, lengths from the configured distribution, capped.
inline std::vector<Request> generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap(spec.rate);
  std::vector<Request> out;
  out.reserve(spec.requests);
  std::vector<TraceRow> rows;
  if (spec.kind == LengthKind::Trace) rows = read_trace(spec.trace_file);
  auto lognormal = [](const LengthDist& d) {
    const double mu = std::log(d.mean) - d.sigma * d.sigma / 2;
    return std::lognormal_distribution<double>(mu, d.sigma);
  };
  auto lp = lognormal(spec.prompt);
  auto ld = lognormal(spec.decode);
  double t = 0;
  for (std::uint64_t i = 0; i < spec.requests; ++i) {
    Request r;
    r.id = i;
    t += gap(rng);
    r.arrival = t;
    switch (spec.kind) {
      case LengthKind::Fixed:
        r.prompt = clamp_length(spec.prompt.mean, spec.max_prompt);
        r.decode = clamp_length(spec.decode.mean, spec.max_decode);
        break;
      case LengthKind::Lognormal:
        r.prompt = clamp_length(lp(rng), spec.max_prompt);
        r.decode = clamp_length(ld(rng), spec.max_decode);
        break;
      case LengthKind::Trace: {
        const auto& row = rows[i % rows.size()];
        r.prompt = std::min(row.prompt, spec.max_prompt);
        r.decode = std::min(row.decode, spec.max_decode);
        if (row.has_arrival) r.arrival = row.arrival + static_cast<double>(i / rows.size()) * rows.back().arrival;
        break;
      }
    }
    out.push_back(r);
  }
  if (spec.kind == LengthKind::Trace) {
    std::stable_sort(out.begin(), out.end(), [](const Request& a, const Request& b) { return a.arrival < b.arrival; });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].id = i;
  }
  return out;
}

}  // namespace hbsim
