#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hbsim/config.hpp"

using namespace hbsim;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty object gives the default run", "[config]") {
  auto c = parse_config_text("{}");
  CHECK(c.name == "desk-stress");
  CHECK(c.model.name == "desk-gqa");
  CHECK(c.device.blocks_per_pe == presets::desk_device().blocks_per_pe);
  CHECK(c.serving.mode == ServeMode::Stress);
}

TEST_CASE("every preset round-trips", "[config]") {
  for (const auto& name : presets::run_names()) {
    INFO(name);
    auto c = presets::run(name);
    c.validate();
    const auto text = serialize(c).dump(2);
    const auto back = parse_config_text(text);
    CHECK(serialize(back).dump(2) == text);
    CHECK(back.model.name == c.model.name);
  }
}

TEST_CASE("round trip keeps doubles exact", "[config]") {
  auto c = presets::run("desk-stress");
  c.workload.rate = 1.0 / 3.0;
  c.device.energy.noc_bit_hop_pj = 0.1 + 0.2;
  c.channel_sweep.compute_scale[16] = 0.7;
  auto back = parse_config_text(serialize(c).dump());
  CHECK(back.workload.rate == c.workload.rate);
  CHECK(back.device.energy.noc_bit_hop_pj == c.device.energy.noc_bit_hop_pj);
  CHECK(back.channel_sweep.compute_scale.at(16) == 0.7);
}

TEST_CASE("unknown keys are rejected with their path", "[config]") {
  CHECK(error_of(R"({"bogus": 1})") == "unknown key: bogus");
  CHECK(error_of(R"({"device": {"mesh": {"m": 4, "links": 2}}})") == "unknown key: device.mesh.links");
  CHECK(error_of(R"({"serving": {"prefill": {"base": 1}}})") == "unknown key: serving.prefill.base");
  CHECK(error_of(R"({"sweep": {"channels": {"chans": []}}})") == "unknown key: sweep.channels.chans");
}

TEST_CASE("type errors name the field", "[config]") {
  CHECK(error_of(R"({"seed": -1})").find("seed") != std::string::npos);
  CHECK(error_of(R"({"workload": {"rate": "fast"}})").find("workload.rate") != std::string::npos);
  CHECK(error_of(R"({"simulate": {"batches": [1, "x"]}})").find("simulate.batches[1]") != std::string::npos);
  CHECK(error_of(R"({"serving": {"policy": "lru"}})").find("serving.policy") != std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
  CHECK(error_of("[]").find("expected an object") != std::string::npos);
}

TEST_CASE("semantic validation runs after parsing", "[config]") {
  CHECK(!error_of(R"({"workload": {"rate": 0}})").empty());
  CHECK(!error_of(R"({"numerics": {"fault": "nope"}})").empty());
  CHECK(!error_of(R"({"numerics": {"tolerance": {"nope": 1e-3}}})").empty());
  CHECK(!error_of(R"({"device": {"mesh": {"m": 0}}})").empty());
  CHECK(!error_of(R"({"preset": "nope"})").empty());
  CHECK(!error_of(R"({"model": {"preset": "nope"}})").empty());
  CHECK(!error_of(R"({"sweep": {"channels": {"compute_scale": {"x": 1}}}})").empty());
}

TEST_CASE("model overrides sit on top of a preset", "[config]") {
  auto c = parse_config_text(R"({"model": {"preset": "llama3-70b", "layers": 2}})");
  CHECK(c.model.layers == 2);
  CHECK(c.model.hidden == presets::model("llama3-70b").hidden);
  // Device follows the model unless given.
  CHECK(c.device.tp == presets::device_for(c.model).tp);
  auto d = parse_config_text(R"({"model": "llama3-70b", "device": {"preset": "desk", "blocks_per_pe": 16}})");
  CHECK(d.device.blocks_per_pe == 16);
  CHECK(d.device.mesh.m == presets::desk_device().mesh.m);
}

TEST_CASE("seed fans out", "[config]") {
  auto c = parse_config_text(R"({"preset": "desk-disaggregated", "seed": 42})");
  CHECK(c.serving.mode == ServeMode::Disaggregated);
  CHECK(c.workload.seed == 42);
  CHECK(c.serving.seed == 42);
  CHECK(c.numerics.seed == 42);
}

TEST_CASE("shipped config files parse", "[config]") {
  const std::filesystem::path dir = HBSIM_SOURCE_DIR "/configs";
  REQUIRE(std::filesystem::exists(dir));
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    INFO(e.path().string());
    CHECK_NOTHROW(load_config(e.path().string()));
    ++n;
  }
  CHECK(n > 0);
}
