#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hbsim/collectives.hpp"
#include "hbsim/config.hpp"
#include "hbsim/report.hpp"

namespace fs = std::filesystem;
using namespace hbsim;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kRuntime = 3 };

struct Globals {
  std::string config_path;
  std::string preset;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  int jobs = 1;
};

RunConfig resolve(const Globals& g) {
  if (!g.config_path.empty() && !g.preset.empty())
    throw ConfigError("--config and --preset are exclusive (put \"preset\" inside the file instead)");
  RunConfig c;
  if (!g.config_path.empty()) {
    c = load_config(g.config_path);
  } else if (!g.preset.empty()) {
    try {
      c = presets::run(g.preset);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.output_dir = "out/" + g.preset;
  }
  if (g.seed_set) c.apply_seed(g.seed);
  if (!g.out.empty()) c.output_dir = g.out;
  c.validate();
  return c;
}

fs::path out_path(const RunConfig& c, const char* file) { return fs::path(c.output_dir) / file; }

void write_resolved(const RunConfig& c) { write_json(out_path(c, "config.json"), serialize(c)); }

// ---- validate-numerics ----

int cmd_validate_numerics(RunConfig c, const std::string& fault, double case_scale) {
  if (!fault.empty()) c.numerics.fault = fault;
  if (case_scale > 0) c.numerics.case_scale = case_scale;
  const auto rs = validate_numerics(c.numerics);
  write_resolved(c);
  write_json(out_path(c, "numerics.json"), to_json(rs));
  {
    auto f = open_out(out_path(c, "numerics.csv"));
    CsvWriter w(f, {"suite", "cases", "max_error", "tolerance", "passed"});
    for (const auto& r : rs) w.row(r.name, static_cast<std::uint64_t>(r.cases), r.max_error, r.tolerance, r.passed);
  }
  for (const auto& r : rs)
    std::printf("%-24s %6zu cases  max_err %.3e  tol %.1e  %s%s%s\n", r.name.c_str(), static_cast<std::size_t>(r.cases),
                r.max_error, r.tolerance, r.passed ? "PASS" : "FAIL", r.note.empty() ? "" : "  ", r.note.c_str());
  const bool ok = all_passed(rs);
  std::printf("%zu suites, %s\n", rs.size(), ok ? "all passed" : "FAILED");
  return ok ? kOk : kFailed;
}

// ---- simulate ----

nlohmann::ordered_json schedule_json(const CommSchedule& s, const MeshConfig& mesh) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["cost_cycles"] = cost_of_schedule(s, mesh);
  auto& phases = j["phases"];
  phases = nlohmann::ordered_json::array();
  for (const auto& p : s.phases) {
    nlohmann::ordered_json pj;
    pj["stage"] = p.stage;
    pj["cost_cycles"] = phase_cost(p, mesh);
    auto& ts = pj["transfers"];
    ts = nlohmann::ordered_json::array();
    for (const auto& t : p.transfers) {
      nlohmann::ordered_json path = nlohmann::ordered_json::array();
      for (const auto& c : t.path) path.push_back({c.x, c.y});
      ts.push_back({{"src", {t.src.x, t.src.y}},
                    {"dst", {t.dst.x, t.dst.y}},
                    {"bytes", t.bytes},
                    {"op", op_name(t.op)},
                    {"plane", plane_name(t.plane)},
                    {"hops", t.hops()},
                    {"chunks", t.chunks},
                    {"path", path}});
    }
    phases.push_back(pj);
  }
  auto& links = j["link_traffic"];
  links = nlohmann::ordered_json::array();
  for (const auto& [l, bytes] : link_traffic(s))
    links.push_back({{"plane", plane_name(l.plane)}, {"from", {l.from.x, l.from.y}}, {"to", {l.to.x, l.to.y}}, {"bytes", bytes}});
  return j;
}

// One layer's flows at a representative decode point.
nlohmann::ordered_json dump_schedules(const RunConfig& c, std::uint64_t batch) {
  const auto& dev = c.device;
  const auto& mesh = dev.mesh;
  const std::uint64_t elem = static_cast<std::uint64_t>(c.model.bytes_per_elem);
  const std::uint64_t hidden_bytes = batch * static_cast<std::uint64_t>(c.model.hidden) * elem;
  const std::uint64_t q_bytes =
      batch * static_cast<std::uint64_t>(c.model.q_heads) * c.model.head_dim * elem / std::max(1, dev.tp);
  std::vector<KvTarget> targets;
  for (std::uint64_t r = 0; r < batch; ++r)
    targets.push_back({r, Coord{static_cast<int>(r % mesh.m), static_cast<int>((r / mesh.m) % mesh.m)}});
  nlohmann::ordered_json j;
  j["mesh"] = {{"m", mesh.m}, {"link_bandwidth", mesh.link_bandwidth}, {"hop_latency", mesh.hop_latency}};
  j["batch"] = batch;
  auto& s = j["schedules"];
  s = nlohmann::ordered_json::array();
  s.push_back(schedule_json(query_replication(std::max<std::uint64_t>(1, q_bytes), mesh), mesh));
  s.push_back(schedule_json(kv_vector_delivery(targets, kv_bytes_per_token_layer(c.model, dev), mesh), mesh));
  s.push_back(schedule_json(attn_output_reduction(std::max<std::uint64_t>(1, q_bytes), mesh), mesh));
  s.push_back(schedule_json(oproj_all_reduce(std::max<std::uint64_t>(1, hidden_bytes / std::max(1, dev.tp)), mesh), mesh));
  s.push_back(schedule_json(norm_stats_all_reduce(batch * 2 * 4, mesh), mesh));
  return j;
}

int cmd_simulate(const RunConfig& c, bool schedules, bool reports) {
  write_resolved(c);
  auto f = open_out(out_path(c, "simulate.csv"));
  CsvWriter w(f, {"model", "batch", "ctx_len", "total_cycles", "compute", "intra_comm", "inter_comm", "energy_j",
                  "x_traffic_frac"});
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (auto b : c.simulate.batches) {
    for (auto len : c.simulate.ctx_lens) {
      const auto rep = decode_iteration_latency(c.model, place_batch(b, len, c.model, c.device), c.device);
      w.row(c.model.name, b, len, rep.total, rep.compute, rep.intra, rep.inter, rep.energy.total(), rep.x_traffic_fraction());
      if (reports) {
        auto j = to_json(rep, c.device);
        j["batch"] = b;
        j["ctx_len"] = len;
        all.push_back(j);
      }
      std::printf("%s B=%llu L=%llu  %.4g cycles  (compute %.3g, intra %.3g, inter %.3g)  X %.3f\n", c.model.name.c_str(),
                  static_cast<unsigned long long>(b), static_cast<unsigned long long>(len), rep.total, rep.compute,
                  rep.intra, rep.inter, rep.x_traffic_fraction());
    }
  }
  if (reports) write_json(out_path(c, "simulate.json"), all);
  if (schedules) write_json(out_path(c, "schedules.json"), dump_schedules(c, c.simulate.batches.front()));
  return kOk;
}

// ---- serve ----

int cmd_serve(const RunConfig& c) {
  write_resolved(c);
  const auto m = ServingSim(c.model, c.device, c.workload, c.serving).run();
  auto j = to_json(m);
  j["mode"] = to_string(c.serving.mode);
  j["policy"] = to_string(c.serving.policy);
  write_json(out_path(c, "metrics.json"), j);
  {
    auto f = open_out(out_path(c, "tokens.csv"));
    write_tokens_csv(f, m);
  }
  {
    auto f = open_out(out_path(c, "e2e.csv"));
    CsvWriter w(f, {"index", "e2e_s"});
    for (std::size_t i = 0; i < m.e2e.size(); ++i) w.row(static_cast<std::uint64_t>(i), m.e2e[i]);
  }
  std::printf("%s/%s: %llu done, TBT p50 %.3g ms p99 %.3g ms, %.4g tok/s, frag %.3f, imbalance %.3f, batch %.2f\n",
              to_string(c.serving.mode), to_string(c.serving.policy), static_cast<unsigned long long>(m.completed),
              m.tbt_p50 * 1e3, m.tbt_p99 * 1e3, m.throughput, m.peak_fragmentation, m.mean_imbalance, m.mean_batch);
  if (c.serving.mode == ServeMode::Disaggregated)
    std::printf("non-overlapped transfer fraction %.4f\n", m.non_overlapped_fraction);
  return kOk;
}

// ---- sweep ----

int cmd_sweep(const RunConfig& c, const std::string& which, int jobs) {
  write_resolved(c);
  const bool all = which == "all";
  if (all || which == "granularity") {
    const auto rows = sweep_pe_granularity(c.granularity, jobs);
    auto f = open_out(out_path(c, "granularity.csv"));
    write_granularity_csv(f, rows);
    std::printf("granularity: %zu rows\n", rows.size());
  }
  if (all || which == "block_size") {
    const auto rows = sweep_block_size(c.block_sweep, c.model, c.device, c.workload, c.serving, jobs);
    auto f = open_out(out_path(c, "block_size.csv"));
    write_block_size_csv(f, rows);
    std::printf("block_size: %zu rows\n", rows.size());
  }
  if (all || which == "channels") {
    const auto rows = sweep_channels(c.channel_sweep, jobs);
    auto f = open_out(out_path(c, "channels.csv"));
    write_channels_csv(f, rows);
    for (const auto& r : rows)
      if (r.model == "mean") std::printf("channels %d: mean performance %.3f\n", r.channels, r.performance);
  }
  return kOk;
}

// ---- alloc-trace ----

int cmd_alloc_trace(RunConfig c) {
  if (c.serving.policy != AllocPolicy::Helios) throw ConfigError("alloc-trace audits the blockwise allocator; set serving.policy to helios");
  c.workload.requests = c.alloc_trace.requests;
  write_resolved(c);
  std::vector<AllocEvent> log;
  ServingSim sim(c.model, c.device, c.workload, c.serving);
  sim.set_alloc_trace(&log);
  sim.run();
  auto f = open_out(out_path(c, "alloc_trace.csv"));
  write_alloc_trace_csv(f, log);
  std::printf("alloc-trace: %zu events for %llu requests\n", log.size(), static_cast<unsigned long long>(c.workload.requests));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hbsim: analytic simulator for a DRAM-stacked PE-mesh LLM decode accelerator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "named run preset")
      ->check(CLI::IsMember(presets::run_names()));
  auto* seed_opt = app.add_option("--seed", g.seed, "seed for workload, routing and numerics");
  app.add_option("--out", g.out, "output directory (overrides output_dir)");
  app.add_option("--jobs", g.jobs, "worker threads for sweeps")->check(CLI::Range(1, 256));

  auto* numerics = app.add_subcommand("validate-numerics", "run the oracle-equivalence suites");
  std::string fault;
  double case_scale = 0;
  numerics->add_option("--fault", fault, "break one suite's kernel (or 'none')");
  numerics->add_option("--case-scale", case_scale, "multiply every suite's case count");

  auto* simulate = app.add_subcommand("simulate", "decode-iteration latency over the batch/length grid");
  bool schedules = false, reports = false;
  simulate->add_flag("--dump-schedules", schedules, "write one layer's communication schedules as JSON");
  simulate->add_flag("--reports", reports, "write full per-point iteration reports as JSON");

  auto* serve = app.add_subcommand("serve", "serving simulation (stress or disaggregated)");

  auto* sweep = app.add_subcommand("sweep", "design-space sweeps");
  std::string which = "all";
  sweep->add_option("--only", which, "granularity, block_size, channels or all")
      ->check(CLI::IsMember({"all", "granularity", "block_size", "channels"}));

  auto* trace = app.add_subcommand("alloc-trace", "per-decision allocator audit trace");

  for (auto* sc : {numerics, simulate, serve, sweep, trace}) sc->fallthrough();

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    const auto c = resolve(g);
    const auto t0 = std::chrono::steady_clock::now();
    int rc = kOk;
    if (*numerics) rc = cmd_validate_numerics(c, fault, case_scale);
    else if (*simulate) rc = cmd_simulate(c, schedules, reports);
    else if (*serve) rc = cmd_serve(c);
    else if (*sweep) rc = cmd_sweep(c, which, g.jobs);
    else if (*trace) rc = cmd_alloc_trace(c);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "wrote %s (%.2f s)\n", c.output_dir.c_str(), s);
    return rc;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
}
