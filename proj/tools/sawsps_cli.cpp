// Command-line runner for the preset scenarios.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "sawsps.hpp"

namespace {

sawsps::Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw sawsps::ConfigError("--config: cannot open '" + path + "'");
  try {
    return sawsps::Json::parse(is);
  } catch (const sawsps::Json::parse_error& e) {
    throw sawsps::ConfigError("--config: " + std::string(e.what()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAW-driven single-photon source simulator"};
  app.require_subcommand(1);

  std::string scenario, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool force = false;
  unsigned threads = 1;
  auto* run = app.add_subcommand("run", "run a preset scenario");
  run->add_option("--scenario", scenario, "preset name (see `list`)")->required();
  run->add_option("--config", config_path, "JSON overrides for the preset");
  run->add_option("--seed", seed, "master seed (overrides the config)");
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("--force", force, "replace an existing output directory");
  run->add_option("--threads", threads, "worker threads, 0 = all cores");

  auto* list = app.add_subcommand("list", "list the preset scenarios");

  std::string show_name;
  auto* show = app.add_subcommand("show-config", "print the full default config of a preset");
  show->add_option("scenario", show_name, "preset name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*list) {
      for (const auto& info : sawsps::list_scenarios()) std::cout << info.name << "\t" << info.description << "\n";
      return 0;
    }
    if (*show) {
      std::cout << sawsps::to_json(sawsps::preset(show_name)).dump(2) << "\n";
      return 0;
    }
    sawsps::Json overrides = sawsps::Json::object();
    if (!config_path.empty()) overrides = read_json_file(config_path);
    sawsps::ScenarioConfig config = sawsps::load_config(scenario, overrides);
    if (seed) config.master_seed = *seed;
    const auto manifest = sawsps::run_scenario(config, {out_dir, force, threads});
    std::cout << "wrote " << manifest.files.size() + 1 << " files to " << out_dir << "\n";
    return 0;
  } catch (const sawsps::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const sawsps::PreconditionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
