#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "selftune/checks.hpp"
#include "selftune/config.hpp"
#include "selftune/errors.hpp"
#include "selftune/plot.hpp"
#include "selftune/runner.hpp"

namespace {

using namespace selftune;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ExperimentConfig load_config(const std::string& preset,
                             const std::string& config_path,
                             const std::vector<std::string>& sets) {
  if (!preset.empty() && !config_path.empty()) {
    throw ConfigError("--preset and --config are mutually exclusive");
  }
  if (preset.empty() && config_path.empty()) {
    throw ConfigError("need --preset NAME or --config FILE (see dump-config --list)");
  }
  ExperimentConfig config = preset.empty() ? parse_config(read_file(config_path))
                                           : preset_config(preset);
  for (const std::string& s : sets) apply_override(config, s);
  return config;
}

int run_check_metagrad(int draws, double epsilon, double tolerance,
                       std::uint64_t seed) {
  const MetaGradCheck check =
      check_meta_gradients(draws, epsilon, tolerance, seed);
  std::printf(
      "check-metagrad: %s  (%d draws, %d failed, worst mg rel %.3e, worst "
      "bmg rel %.3e, tolerance %.1e)\n",
      check.failures == 0 ? "PASS" : "FAIL", check.draws, check.failures,
      check.worst_mg, check.worst_bmg, tolerance);
  return check.failures == 0 ? 0 : 1;
}

void print_artifacts(const RunArtifacts& art, int seed) {
  std::printf("seed %d: %zu rows, final gamma %.6f, final mean return %s\n",
              seed, art.rows.size(), art.final_gamma,
              format_double(art.final_mean_return).c_str());
  std::printf("  metrics: %s\n", art.csv_path.c_str());
  std::printf("  summary: %s\n", art.summary_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selftune: a discount-factor meta-gradient laboratory"};
  app.require_subcommand(1);

  std::string preset, config_path;
  std::vector<std::string> sets;
  int seed = std::numeric_limits<int>::min();
  std::string seeds_override;

  CLI::App* run = app.add_subcommand("run", "train one seed and write its metrics CSV");
  run->add_option("--preset", preset, "preset name (see dump-config --list)");
  run->add_option("--config", config_path, "config file path");
  run->add_option("--set", sets, "override, e.g. --set experiment.budget=100")
      ->take_all();
  run->add_option("--seed", seed, "seed (default: first of experiment.seeds)");

  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "run every seed independently and write the aggregate bands");
  sweep_cmd->add_option("--preset", preset, "preset name");
  sweep_cmd->add_option("--config", config_path, "config file path");
  sweep_cmd->add_option("--set", sets, "override, e.g. --set experiment.budget=100")
      ->take_all();
  sweep_cmd->add_option("--seeds", seeds_override,
                        "comma list overriding experiment.seeds");

  std::string aggregate_path, quantity, output_path;
  CLI::App* plot = app.add_subcommand("plot", "render an aggregate column as SVG");
  plot->add_option("--aggregate", aggregate_path, "aggregate.csv path")
      ->required();
  plot->add_option("--quantity", quantity, "return | gamma | advantage_mean")
      ->required();
  plot->add_option("--output", output_path, "output .svg path")->required();

  int draws = 100;
  double epsilon = 1e-4, tolerance = 1e-5;
  std::uint64_t check_seed = 2024;
  CLI::App* check = app.add_subcommand(
      "check-metagrad",
      "validate analytic meta-gradients against finite differences");
  check->add_option("--draws", draws, "random configurations to check");
  check->add_option("--epsilon", epsilon, "finite-difference step on the logit");
  check->add_option("--tolerance", tolerance, "relative-error gate");
  check->add_option("--seed", check_seed, "base seed for the random draws");

  std::string dump_name;
  bool list_presets = false;
  CLI::App* dump = app.add_subcommand("dump-config",
                                      "print a full config as key = value lines");
  dump->add_option("name", dump_name, "preset name");
  dump->add_option("--config", config_path, "config file path");
  dump->add_option("--set", sets, "override applied before dumping")->take_all();
  dump->add_flag("--list", list_presets, "list preset names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      const ExperimentConfig config = load_config(preset, config_path, sets);
      validate_config(config);
      const int chosen =
          seed == std::numeric_limits<int>::min() ? config.seeds.front() : seed;
      const RunArtifacts art = run_experiment(config, chosen);
      print_artifacts(art, chosen);
      return 0;
    }
    if (*sweep_cmd) {
      ExperimentConfig config = load_config(preset, config_path, sets);
      if (!seeds_override.empty()) {
        apply_override(config, "experiment.seeds=" + seeds_override);
      }
      validate_config(config);
      const SweepResult result = sweep(config, config.seeds);
      for (std::size_t i = 0; i < result.runs.size(); ++i) {
        // order of result.runs follows the seed list minus failures; report
        // each from its own summary fields
        const RunArtifacts& art = result.runs[i];
        std::printf("%s\n", art.summary_path.c_str());
      }
      if (!result.aggregate_path.empty()) {
        std::printf("aggregate: %s\n", result.aggregate_path.c_str());
      }
      for (const std::string& f : result.failures) {
        std::fprintf(stderr, "FAILED %s\n", f.c_str());
      }
      return result.failures.empty() ? 0 : 3;
    }
    if (*plot) {
      emit_plot(aggregate_path, quantity, output_path);
      std::printf("wrote %s\n", output_path.c_str());
      return 0;
    }
    if (*check) {
      return run_check_metagrad(draws, epsilon, tolerance, check_seed);
    }
    if (*dump) {
      if (list_presets) {
        for (const std::string& name : preset_names()) {
          std::printf("%s\n", name.c_str());
        }
        return 0;
      }
      if (!dump_name.empty() && !config_path.empty()) {
        throw ConfigError("give either a preset name or --config, not both");
      }
      ExperimentConfig config;
      if (!dump_name.empty()) {
        config = preset_config(dump_name);
      } else if (!config_path.empty()) {
        config = parse_config(read_file(config_path));
      } else {
        throw ConfigError("need a preset name, --config FILE, or --list");
      }
      for (const std::string& s : sets) apply_override(config, s);
      validate_config(config);
      std::fputs(dump_config(config).c_str(), stdout);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const DegenerateBatchError& e) {
    std::fprintf(stderr, "degenerate batch: %s\n", e.what());
    return 3;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 5;
  }
  return 0;
}
