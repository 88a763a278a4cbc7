#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "v2c/cli/run_config.hpp"
#include "v2c/cli/stages.hpp"

int main(int argc, char** argv) {
  CLI::App app{"v2c: vision-to-concept bottleneck pipeline over precomputed embeddings"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::string seed;
  std::vector<std::string> overrides;
  bool list_keys = false;

  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--out", out_dir, "output directory (config key 'out')");
  app.add_option("--seed", seed, "seed (config key 'seed')");
  app.add_option("--set", overrides, "override a config key: key=value (repeatable)");
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  for (auto name : v2c::cli::stage_names()) {
    app.add_subcommand(std::string(name), "run the " + std::string(name) + " stage")->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : v2c::cli::kExitConfig;
  }

  if (list_keys) {
    for (const auto& k : v2c::cli::known_keys()) {
      std::cout << k.name << " = " << k.default_value << "    # " << k.help << "\n";
    }
    return 0;
  }

  v2c::cli::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = v2c::cli::RunConfig::from_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw v2c::cli::ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!out_dir.empty()) cfg.set("out", out_dir);
    if (!seed.empty()) cfg.set("seed", seed);
  } catch (const v2c::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return v2c::cli::kExitConfig;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  return v2c::cli::run_stage(stage, cfg, std::cerr);
}
