#ifndef SELFTUNE_CONFIG_HPP
#define SELFTUNE_CONFIG_HPP

#include <string>
#include <vector>

#include "selftune/losses.hpp"
#include "selftune/meta.hpp"

namespace selftune {

// Everything one experiment cell needs, held as plain fields.  The config
// file format is flat `section.key = value` lines; every field round-trips
// losslessly through dump_config / parse_config, and the shipped presets
// reproduce the published hyperparameter table exactly.
struct ExperimentConfig {
  // experiment.*
  std::string environment = "discounting-chain";
  Algorithm algorithm = Algorithm::mg;
  std::string outer_source = "fixed";  // biased | fixed
  bool normalize_advantages = false;
  int budget = 2000;  // meta-updates
  int batch_size = 128;
  int sequence_length = 100;
  std::vector<int> seeds = {0};
  std::string output_dir = "runs";

  // network.*
  std::string architecture = "linear";  // linear | conv-mlp

  // inner.*
  double gamma_start = 0.95;
  double gamma_lo = 0.9;
  double gamma_hi = 1.0;
  double inner_lambda = 0.0;
  double inner_c_pg = 1.0;
  double inner_c_td = 0.0;
  double inner_c_en = 0.005;

  // inner_opt.*
  OptimizerConfig inner_opt{.kind = OptimizerKind::sgd, .learning_rate = 0.5};

  // outer.*
  double outer_gamma = 1.0;
  double outer_lambda = 0.0;
  double outer_c_pg = 1.0;
  double outer_c_td = 0.0;
  double outer_c_en = 0.005;

  // meta_opt.*  (the learning rate is picked by the algorithm selector)
  OptimizerKind meta_kind = OptimizerKind::adam;
  double mg_learning_rate = 0.1;
  double bmg_learning_rate = 0.1;
  double meta_clip_norm = 0.0;

  // bmg.*
  BmgSpec bmg;

  // outer_critic.*  (trains the outer value head; snake only)
  OptimizerConfig outer_critic_opt;

  // diagnostics.*
  bool fd_check = false;
  double fd_epsilon = 1e-4;
};

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double value);

// The preset cells shipped with the tool, e.g. "discounting-chain.mg.biased".
std::vector<std::string> preset_names();
ExperimentConfig preset_config(const std::string& name);

// Parse a whole config file (defaults overlaid with the file's keys).
// Unknown keys, malformed values, and failed validation all raise
// ConfigError naming every offending field path.
ExperimentConfig parse_config(const std::string& text);

// Apply one `section.key=value` override (the CLI's --set flag).
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Serialize every field in fixed order; parse_config(dump_config(c)) == c.
std::string dump_config(const ExperimentConfig& config);

// Check all invariants at once; throws ConfigError listing each violated
// field path on its own line.
void validate_config(const ExperimentConfig& config);

// The biased/fixed selector resolved against the architecture: the biased
// outer loss reuses the inner loss's value estimator, the fixed one uses
// values consistent with gamma-prime.
ValueSource resolved_inner_source(const ExperimentConfig& config);
ValueSource resolved_outer_source(const ExperimentConfig& config);

// The inner/outer loss bundle the meta-gradient engines consume.
MetaLossConfig loss_config(const ExperimentConfig& config);

// Meta-optimizer settings with the algorithm-appropriate learning rate.
OptimizerConfig meta_optimizer_config(const ExperimentConfig& config);

}  // namespace selftune

#endif
