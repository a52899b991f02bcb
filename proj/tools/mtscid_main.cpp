// mtscid command-line front end.
//
//   mtscid <gen-data|train|score|eval|run-all> [--config FILE] [--seed N] [--out DIR]
//
// Exit status: 0 ok, 1 other failure, 2 config error, 3 missing input,
// 4 training divergence. MTSCID_THREADS caps scoring parallelism.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mtscid/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mtscid: dual-branch time-series anomaly detector"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "RNG seed (overrides the config file)");
  app.add_option("--out", out_dir, "output directory (overrides the config file)");
  app.fallthrough();
  for (const char* name : {"gen-data", "train", "score", "eval", "run-all"}) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mtscid::kExitConfig;
  }

  mtscid::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = mtscid::LoadRunConfig(config_path);
  } catch (const mtscid::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return mtscid::kExitConfig;
  } catch (const mtscid::IoError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return mtscid::kExitConfig;
  }
  if (seed) cfg.seed = *seed;
  if (out_dir) cfg.out_dir = *out_dir;
  return mtscid::RunCommand(app.get_subcommands().front()->get_name(), cfg);
}
