#ifndef SELFTUNE_RUNNER_HPP
#define SELFTUNE_RUNNER_HPP

#include <string>
#include <vector>

#include "selftune/config.hpp"
#include "selftune/envs.hpp"
#include "selftune/meta.hpp"
#include "selftune/network.hpp"

namespace selftune {

// One line of the metrics CSV.  `wall_clock_s` is measured but kept out of
// the serialized rows so that re-running a (config, seed) pair reproduces
// the file byte for byte; the total lands in the run summary instead.
struct MetricsRow {
  int meta_update = 0;       // 1-based, strictly increasing
  long long env_steps = 0;   // cumulative environment transitions
  double mean_return = 0.0;  // episodes completed during this update
  double gamma = 0.0;        // after the meta update
  double meta_grad = 0.0;
  double meta_grad_fd = 0.0;  // finite-difference replay, when enabled
  double advantage_mean = 0.0;
  double advantage_std = 0.0;
  double wall_clock_s = 0.0;
};

// The full training loop for one seed, in memory: collect inner batch with
// pi_theta -> (probe) inner update -> collect outer batch with pi_theta' ->
// meta-gradient -> meta update -> outer-critic TD step (conv-mlp only).
// Deterministic per (config, seed); numerical failures are rethrown with
// the offending meta-update index.
std::vector<MetricsRow> run_rows(const ExperimentConfig& config, int seed);

// CSV codecs.  The metrics schema is frozen and versioned by its leading
// comment line; `fd_column` appends meta_grad_fd.
std::string metrics_csv(const std::vector<MetricsRow>& rows, bool fd_column);

// Minimal numeric table for aggregates and plotting.
struct CsvTable {
  std::string schema;  // the "# ..." comment line, without the marker
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  // Index of a column; SchemaError when absent.
  int column(const std::string& name) const;
};

CsvTable read_csv(const std::string& text);
std::string write_csv(const CsvTable& table);
CsvTable metrics_table(const std::vector<MetricsRow>& rows, bool fd_column);

// Mean and population-std bands across per-seed runs, per step.
CsvTable aggregate_runs(const std::vector<std::vector<MetricsRow>>& runs,
                        bool fd_column);

// Where files land: $SELFTUNE_OUTPUT_ROOT (when set) / output_dir / label.
std::string run_label(const ExperimentConfig& config);
std::string run_directory(const ExperimentConfig& config);

struct RunArtifacts {
  std::vector<MetricsRow> rows;
  double final_gamma = 0.0;       // gamma_start when the budget is zero
  double final_mean_return = 0.0;
  long long env_steps = 0;
  double wall_clock_s = 0.0;
  std::string csv_path;
  std::string summary_path;
};

// run_rows plus persistence: writes seed<k>.csv and seed<k>.summary under
// the run directory.
RunArtifacts run_experiment(const ExperimentConfig& config, int seed);

struct SweepResult {
  std::vector<RunArtifacts> runs;        // successful seeds, in order
  std::vector<std::string> failures;     // "seed <k>: <error>" lines
  std::string aggregate_path;            // empty when no seed succeeded
};

// Runs every seed independently; a failing seed is reported, not fatal.
SweepResult sweep(const ExperimentConfig& config, const std::vector<int>& seeds);

// The finite-difference replay of one meta-gradient: re-executes the exact
// pipeline (inner update from the optimizer snapshot, then the outer
// objective; for bmg, the KL against the frozen bootstrap target) at
// perturbed logits.  This is the validator behind check-metagrad and the
// meta_grad_fd column.
double meta_gradient_fd_replay(const AgentParams& agent, const MetaParams& meta,
                               const TrajectoryBatch& inner_batch,
                               const TrajectoryBatch& outer_batch,
                               const MetaLossConfig& cfg, Algorithm algorithm,
                               const BmgSpec& spec, const Optimizer& opt_snapshot,
                               double epsilon);

}  // namespace selftune

#endif
