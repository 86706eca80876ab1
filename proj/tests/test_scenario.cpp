#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sawsps.hpp"

using namespace sawsps;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sawsps_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Small enough to run every preset in a couple of seconds.
Json small_overrides(const std::string& name) {
  if (name == "fig3_power_series") {
    return {{"pump", {{"powers_uw", {0.1, 0.2, 0.5, 1.0, 20.0}}}},
            {"simulation", {{"trajectories", 4}, {"pulses_per_trajectory", 2000}}}};
  }
  if (name == "fig4_transients") return {{"simulation", {{"trajectories", 8}, {"pulses_per_trajectory", 500}}}};
  if (name == "fig4c_delays") return {{"pump", {{"powers_uw", {0.1, 1.0, 10.0}}}}};
  if (name == "fig5_ensemble") {
    return {{"simulation", {{"device_runs", 2}, {"pulses_per_run", 20}}},
            {"layout", {{"pairs_per_pulse", 30.0}}}};
  }
  if (name == "fig7_remote") return {{"simulation", {{"device_runs", 2}, {"pulses_per_run", 300}}}};
  return {{"simulation", {{"device_runs", 3}, {"pulses_per_run", 2000}}}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SAWSPS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Presets, ListedInOrder) {
  const std::vector<std::string> expected{"fig3_power_series", "fig4_transients", "fig4c_delays",
                                          "fig5_ensemble",     "fig7_remote",     "g2_antibunching"};
  std::vector<std::string> names;
  for (const auto& s : list_scenarios()) {
    names.push_back(s.name);
    EXPECT_FALSE(s.description.empty());
  }
  EXPECT_EQ(names, expected);
}

TEST(Presets, ValidAndRoundTripThroughJson) {
  for (const auto& info : list_scenarios()) {
    const ScenarioConfig c = preset(info.name);
    EXPECT_NO_THROW(validate(c)) << info.name;
    const Json j = to_json(c);
    ScenarioConfig back = preset(info.name);
    // Start from a different preset's values so every field must come from j.
    back.sites.clear();
    back.powers_uw = {123.0};
    apply_json(back, j);
    EXPECT_EQ(to_json(back), j) << info.name;
  }
}

TEST(Presets, UnknownNameRejected) {
  EXPECT_THROW(preset("fig9"), ConfigError);
  EXPECT_THROW(load_config("nope", Json::object()), ConfigError);
}

TEST(Config, UnknownKeysAreErrorsAtEveryDepth) {
  EXPECT_THROW(load_config("fig4_transients", {{"bogus", 1}}), ConfigError);
  EXPECT_THROW(load_config("fig4_transients", {{"pump", {{"power_uw", {1.0}}}}}), ConfigError);
  EXPECT_THROW(load_config("fig7_remote", {{"layout", {{"sites", {{{"x_um", 1.0}, {"radius", 0.1}}}}}}}),
               ConfigError);
  try {
    (void)load_config("fig4_transients", {{"simulation", {{"bin_size_ns", 0.1}}}});
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("simulation.bin_size_ns"), std::string::npos) << e.what();
  }
}

TEST(Config, TypeErrorsNameTheField) {
  try {
    (void)load_config("fig3_power_series", {{"simulation", {{"trajectories", -3}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("simulation.trajectories"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config("fig3_power_series", {{"simulation", {{"trajectories", 2.5}}}}), ConfigError);
  EXPECT_THROW(load_config("fig3_power_series", {{"pump", {{"pulse_period_ns", "fast"}}}}), ConfigError);
  EXPECT_THROW(load_config("fig3_power_series", {{"scenario", "fig4_transients"}}), ConfigError);
}

TEST(Config, PartialOverridesKeepTheRest) {
  const auto c = load_config("fig4_transients", {{"master_seed", 77}, {"pump", {{"powers_uw", {1.0, 3.0}}}}});
  EXPECT_EQ(c.master_seed, 77u);
  EXPECT_EQ(c.powers_uw, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(c.trajectories, preset("fig4_transients").trajectories);
}

TEST(Config, ValidationNamesTheField) {
  auto expect_field = [](ScenarioConfig c, const std::string& field) {
    try {
      validate(c);
      ADD_FAILURE() << "no error for " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
    }
  };
  auto c = preset("fig4_transients");
  c.powers_uw = {2.0, 1.0};
  expect_field(c, "pump.powers_uw");
  c = preset("fig4_transients");
  c.lifetimes_ns = {1.5, -1.0, 0.9};
  expect_field(c, "cascade");
  c = preset("fig4_transients");
  c.bin_ns = 1.0;
  expect_field(c, "simulation.bin_ns");
  c = preset("fig4_transients");
  c.step_ns = 0.1;
  expect_field(c, "simulation.step_ns");
  c = preset("fig4_transients");
  c.window_origin_ns = 0.5;
  expect_field(c, "simulation.window_origin_ns");
  c = preset("fig7_remote");
  c.sites[1].x_um = -50.0;
  expect_field(c, "layout.sites[1].x_um");
  c = preset("fig7_remote");
  c.sites[0].capture_prob = 1.5;
  expect_field(c, "layout.sites[0].capture_prob");
  c = preset("g2_antibunching");
  c.g2_max_delay_ns = 10.0;
  expect_field(c, "analysis.g2_max_delay_ns");
  c = preset("g2_antibunching");
  c.labels = {"XX"};
  expect_field(c, "detector.lines");
  c = preset("fig5_ensemble");
  c.field.width_um = 50.0;
  expect_field(c, "layout.field");
}

TEST(Run, EveryPresetWritesAHashedManifest) {
  for (const auto& info : list_scenarios()) {
    const fs::path out = scratch(info.name);
    const auto config = load_config(info.name, small_overrides(info.name));
    const Manifest m = run_scenario(config, {out, false, 2});
    ASSERT_TRUE(fs::is_directory(out)) << info.name;
    EXPECT_FALSE(fs::exists(out.string() + ".partial"));
    const Json written = Json::parse(slurp(out / "manifest.json"));
    EXPECT_EQ(written, m.to_json());
    EXPECT_EQ(written["scenario"], info.name);
    EXPECT_EQ(written["config_sha256"], sha256_hex(slurp(out / "config.json")));
    ASSERT_GE(m.files.size(), 2u) << info.name;
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(out)) on_disk += e.path().filename() != "manifest.json" ? 1 : 0;
    EXPECT_EQ(on_disk, m.files.size());
    for (const auto& f : m.files) {
      const std::string bytes = slurp(out / f.path);
      EXPECT_EQ(bytes.size(), f.bytes) << f.path;
      EXPECT_EQ(sha256_hex(bytes), f.sha256) << f.path;
    }
    // The written config reproduces the run's config exactly.
    ScenarioConfig again = preset(info.name);
    apply_json(again, Json::parse(slurp(out / "config.json")));
    EXPECT_EQ(to_json(again), to_json(config));
    fs::remove_all(out);
  }
}

TEST(Run, RefusesExistingDirectoryWithoutForce) {
  const fs::path out = scratch("exists");
  fs::create_directories(out);
  std::ofstream(out / "keep.txt") << "x";
  const auto config = load_config("fig4c_delays", small_overrides("fig4c_delays"));
  EXPECT_THROW(run_scenario(config, {out, false, 1}), OutputError);
  EXPECT_TRUE(fs::exists(out / "keep.txt"));
  EXPECT_NO_THROW(run_scenario(config, {out, true, 1}));
  EXPECT_FALSE(fs::exists(out / "keep.txt"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_THROW(run_scenario(config, {fs::path{}, false, 1}), OutputError);
  fs::remove_all(out);
}

TEST(Run, InvalidConfigLeavesNoOutput) {
  const fs::path out = scratch("invalid");
  auto config = preset("fig4_transients");
  config.bin_ns = -1.0;
  EXPECT_THROW(run_scenario(config, {out, false, 1}), ConfigError);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_FALSE(fs::exists(out.string() + ".partial"));
}

TEST(Run, OutputIndependentOfThreadCount) {
  for (const std::string name : {"fig4_transients", "fig7_remote", "g2_antibunching"}) {
    const auto config = load_config(name, small_overrides(name));
    const fs::path a = scratch(name + "_t1"), b = scratch(name + "_t3");
    const Manifest ma = run_scenario(config, {a, false, 1});
    const Manifest mb = run_scenario(config, {b, false, 3});
    EXPECT_EQ(ma.to_json(), mb.to_json()) << name;
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST(Run, SeedChangesStochasticOutput) {
  auto config = load_config("fig4_transients", small_overrides("fig4_transients"));
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  const Manifest ma = run_scenario(config, {a, false, 1});
  config.master_seed = 2;
  const Manifest mb = run_scenario(config, {b, false, 1});
  std::map<std::string, std::string> ha, hb;
  for (const auto& f : ma.files) ha[f.path] = f.sha256;
  for (const auto& f : mb.files) hb[f.path] = f.sha256;
  EXPECT_NE(ha.at("transient_g0.2_1X.csv"), hb.at("transient_g0.2_1X.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("list"), 0);
  EXPECT_EQ(run_cli("show-config fig7_remote"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  const fs::path out = scratch("cli");
  EXPECT_EQ(run_cli("run --scenario nope --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out));

  const fs::path cfg = scratch("cli_cfg.json");
  std::ofstream(cfg) << R"({"simulation": {"bin_ns": 0}})";
  EXPECT_EQ(run_cli("run --scenario fig4_transients --config " + cfg.string() + " --out " + out.string()), 2);
  std::ofstream(cfg) << R"({"simulaton": {}})";
  EXPECT_EQ(run_cli("run --scenario fig4_transients --config " + cfg.string() + " --out " + out.string()), 2);
  std::ofstream(cfg) << "{ not json";
  EXPECT_EQ(run_cli("run --scenario fig4_transients --config " + cfg.string() + " --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out));

  std::ofstream(cfg) << small_overrides("fig4c_delays").dump();
  EXPECT_EQ(run_cli("run --scenario fig4c_delays --seed 5 --config " + cfg.string() + " --out " + out.string()), 0);
  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 5);
  // Second run into the same directory needs --force.
  EXPECT_EQ(run_cli("run --scenario fig4c_delays --config " + cfg.string() + " --out " + out.string()), 2);
  EXPECT_EQ(run_cli("run --scenario fig4c_delays --force --config " + cfg.string() + " --out " + out.string()), 0);
  fs::remove_all(out);
  fs::remove(cfg);
}
