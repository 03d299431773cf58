#include "selftune/runner.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "selftune/diagnostics.hpp"
#include "selftune/errors.hpp"
#include "selftune/losses.hpp"
#include "selftune/rng.hpp"
#include "selftune/tape.hpp"

namespace selftune {

namespace {

constexpr const char* kMetricsSchema = "selftune-metrics v1";
constexpr const char* kAggregateSchema = "selftune-aggregate v1";

PolicyFn policy_of(const AgentParams& agent) {
  return [agent](const Tensor& obs) { return policy_probs(agent, obs).value; };
}

// Mean of the episodes completed inside the two slices; falls back to the
// previous value (tracking "latest known performance") when none finished.
double mean_return_of(const TrajectoryBatch& a, const TrajectoryBatch& b,
                      double previous) {
  double sum = 0.0;
  int n = 0;
  for (double r : a.episode_returns) {
    sum += r;
    ++n;
  }
  for (double r : b.episode_returns) {
    sum += r;
    ++n;
  }
  return n > 0 ? sum / n : previous;
}

// One TD step on the outer value head; every other tensor is untouched by
// construction (the head reads the torso through a gradient stop).
void outer_critic_step(AgentParams& agent, const TrajectoryBatch& batch,
                       double gamma_prime, Optimizer& opt) {
  Tape tape;
  const std::vector<Var> vars = register_agent(tape, agent, agent.outer_head);
  const Var loss = outer_critic_td_loss(tape, agent, vars, batch, gamma_prime);
  std::vector<Var> head_vars;
  std::vector<DualTensor> head_params;
  head_vars.reserve(agent.outer_head.size());
  head_params.reserve(agent.outer_head.size());
  for (int idx : agent.outer_head) {
    head_vars.push_back(vars[static_cast<std::size_t>(idx)]);
    head_params.push_back(agent.tensors[static_cast<std::size_t>(idx)]);
  }
  const std::vector<DualTensor> grads = tape.gradient(loss, head_vars);
  const std::vector<DualTensor> stepped = opt.step(head_params, grads);
  for (std::size_t k = 0; k < stepped.size(); ++k) {
    agent.tensors[static_cast<std::size_t>(agent.outer_head[k])] = stepped[k];
  }
}

double parse_csv_number(const std::string& text) {
  double out = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const std::from_chars_result res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) {
    throw SchemaError("not a number in csv: '" + text + "'");
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw StateError("failed writing '" + path + "'");
}

}  // namespace

std::vector<MetricsRow> run_rows(const ExperimentConfig& config, int seed) {
  validate_config(config);
  const MetaLossConfig cfg = loss_config(config);
  Collector collector(
      config.environment, config.batch_size,
      splitmix64(static_cast<std::uint64_t>(seed) ^ 0x636f6c6c6563ULL));
  const NetworkSpec spec =
      config.architecture == "linear"
          ? NetworkSpec::linear(collector.obs_shape(), collector.action_count())
          : NetworkSpec::conv_mlp(collector.obs_shape(),
                                  collector.action_count());
  AgentParams agent = init_agent(
      spec, splitmix64(static_cast<std::uint64_t>(seed) ^ 0x6167656e74ULL));
  MetaParams meta{
      logit_of_gamma(config.gamma_start, config.gamma_lo, config.gamma_hi),
      config.gamma_lo, config.gamma_hi};
  Optimizer inner_opt(config.inner_opt);
  Optimizer meta_opt(meta_optimizer_config(config));
  Optimizer critic_opt(config.outer_critic_opt);
  const bool train_outer_critic = !spec.is_linear();
  const std::string tag =
      config.normalize_advantages ? "normalized" : config.outer_source;
  const double steps_per_batch =
      static_cast<double>(config.batch_size) * config.sequence_length;

  std::vector<MetricsRow> rows;
  rows.reserve(static_cast<std::size_t>(config.budget));
  long long env_steps = 0;
  double last_mean_return = std::numeric_limits<double>::quiet_NaN();
  for (int u = 1; u <= config.budget; ++u) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const TrajectoryBatch inner_batch =
          collector.collect(config.sequence_length, policy_of(agent));
      env_steps += static_cast<long long>(steps_per_batch);
      // look ahead with a throwaway optimizer copy so the outer batch can
      // be collected by the updated policy; the engine then replays the
      // identical step on the real optimizer
      Optimizer probe = inner_opt;
      const AgentParams theta_prime =
          inner_update(agent, meta, inner_batch, cfg, probe).values_only();
      const TrajectoryBatch outer_batch =
          collector.collect(config.sequence_length, policy_of(theta_prime));
      env_steps += static_cast<long long>(steps_per_batch);

      std::optional<Optimizer> snapshot;
      if (config.fd_check) snapshot = inner_opt;
      const MetaGradientResult res =
          config.algorithm == Algorithm::mg
              ? mg_meta_gradient(agent, meta, inner_batch, outer_batch, cfg,
                                 inner_opt)
              : bmg_meta_gradient(agent, meta, inner_batch, outer_batch, cfg,
                                  config.bmg, inner_opt);
      double fd = std::numeric_limits<double>::quiet_NaN();
      if (config.fd_check) {
        fd = meta_gradient_fd_replay(agent, meta, inner_batch, outer_batch, cfg,
                                     config.algorithm, config.bmg, *snapshot,
                                     config.fd_epsilon);
      }
      const AdvantageStats stats = advantage_stats_from_weights(
          res.outer_weights, config.sequence_length, tag);

      meta.z = meta_update(meta_opt, meta.z, res.meta_gradient);
      agent = res.updated.values_only();
      if (train_outer_critic) {
        outer_critic_step(agent, outer_batch, config.outer_gamma, critic_opt);
      }

      last_mean_return =
          mean_return_of(inner_batch, outer_batch, last_mean_return);
      MetricsRow row;
      row.meta_update = u;
      row.env_steps = env_steps;
      row.mean_return = last_mean_return;
      row.gamma = gamma_of_logit(meta).v;
      row.meta_grad = res.meta_gradient;
      row.meta_grad_fd = fd;
      row.advantage_mean = stats.mean;
      row.advantage_std = stats.std;
      row.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      rows.push_back(row);
    } catch (const NumericalError& e) {
      throw NumericalError("meta-update " + std::to_string(u) + ": " + e.what());
    } catch (const DegenerateBatchError& e) {
      throw DegenerateBatchError("meta-update " + std::to_string(u) + ": " +
                                 e.what());
    }
  }
  return rows;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, bool fd_column) {
  std::string out = "# ";
  out += kMetricsSchema;
  out += '\n';
  out += "meta_update,env_steps,mean_return,gamma,meta_grad";
  if (fd_column) out += ",meta_grad_fd";
  out += ",advantage_mean,advantage_std\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.meta_update);
    out += ',';
    out += std::to_string(r.env_steps);
    out += ',';
    out += format_double(r.mean_return);
    out += ',';
    out += format_double(r.gamma);
    out += ',';
    out += format_double(r.meta_grad);
    if (fd_column) {
      out += ',';
      out += format_double(r.meta_grad_fd);
    }
    out += ',';
    out += format_double(r.advantage_mean);
    out += ',';
    out += format_double(r.advantage_std);
    out += '\n';
  }
  return out;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  throw SchemaError("missing column '" + name + "'");
}

CsvTable read_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (table.schema.empty()) {
        std::size_t start = 1;
        while (start < line.size() && line[start] == ' ') ++start;
        table.schema = line.substr(start);
      }
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      table.columns = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns.size()) {
      throw SchemaError("csv row has " + std::to_string(cells.size()) +
                        " cells, header has " +
                        std::to_string(table.columns.size()));
    }
    std::vector<double> values;
    values.reserve(cells.size());
    for (const std::string& c : cells) values.push_back(parse_csv_number(c));
    table.rows.push_back(std::move(values));
  }
  if (!have_header) throw SchemaError("csv has no header row");
  return table;
}

std::string write_csv(const CsvTable& table) {
  std::string out;
  if (!table.schema.empty()) {
    out += "# ";
    out += table.schema;
    out += '\n';
  }
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out += ',';
    out += table.columns[i];
  }
  out += '\n';
  for (const std::vector<double>& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

CsvTable metrics_table(const std::vector<MetricsRow>& rows, bool fd_column) {
  return read_csv(metrics_csv(rows, fd_column));
}

CsvTable aggregate_runs(const std::vector<std::vector<MetricsRow>>& runs,
                        bool fd_column) {
  CsvTable table;
  table.schema = kAggregateSchema;
  std::vector<std::string> metrics = {"mean_return", "gamma", "meta_grad"};
  if (fd_column) metrics.push_back("meta_grad_fd");
  metrics.push_back("advantage_mean");
  metrics.push_back("advantage_std");
  table.columns = {"meta_update", "env_steps"};
  for (const std::string& m : metrics) {
    table.columns.push_back(m + "_mean");
    table.columns.push_back(m + "_std");
  }
  if (runs.empty()) return table;
  std::size_t steps = runs[0].size();
  for (const std::vector<MetricsRow>& r : runs) steps = std::min(steps, r.size());
  auto metric_of = [](const MetricsRow& row, const std::string& name) {
    if (name == "mean_return") return row.mean_return;
    if (name == "gamma") return row.gamma;
    if (name == "meta_grad") return row.meta_grad;
    if (name == "meta_grad_fd") return row.meta_grad_fd;
    if (name == "advantage_mean") return row.advantage_mean;
    return row.advantage_std;
  };
  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<double> out;
    out.push_back(static_cast<double>(runs[0][i].meta_update));
    out.push_back(static_cast<double>(runs[0][i].env_steps));
    for (const std::string& m : metrics) {
      double sum = 0.0;
      for (const std::vector<MetricsRow>& r : runs) sum += metric_of(r[i], m);
      const double mean = sum / runs.size();
      double varsum = 0.0;
      for (const std::vector<MetricsRow>& r : runs) {
        const double d = metric_of(r[i], m) - mean;
        varsum += d * d;
      }
      out.push_back(mean);
      out.push_back(std::sqrt(varsum / runs.size()));
    }
    table.rows.push_back(std::move(out));
  }
  return table;
}

std::string run_label(const ExperimentConfig& config) {
  std::string label = config.environment;
  label += '.';
  label += to_string(config.algorithm);
  label += '.';
  label += config.outer_source;
  if (config.normalize_advantages) label += ".normalized";
  return label;
}

std::string run_directory(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("SELFTUNE_OUTPUT_ROOT");
  fs::path base = (root && *root) ? fs::path(root) : fs::path(".");
  return (base / config.output_dir / run_label(config)).string();
}

RunArtifacts run_experiment(const ExperimentConfig& config, int seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunArtifacts art;
  art.rows = run_rows(config, seed);
  art.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  art.final_gamma = art.rows.empty() ? config.gamma_start : art.rows.back().gamma;
  art.final_mean_return = art.rows.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : art.rows.back().mean_return;
  art.env_steps = art.rows.empty() ? 0 : art.rows.back().env_steps;

  namespace fs = std::filesystem;
  const fs::path dir = run_directory(config);
  fs::create_directories(dir);
  const std::string stem = "seed" + std::to_string(seed);
  art.csv_path = (dir / (stem + ".csv")).string();
  write_text_file(art.csv_path, metrics_csv(art.rows, config.fd_check));

  std::string summary = "# selftune-run-summary v1\n";
  summary += "label = " + run_label(config) + "\n";
  summary += "seed = " + std::to_string(seed) + "\n";
  summary += "budget = " + std::to_string(config.budget) + "\n";
  summary += "rows = " + std::to_string(art.rows.size()) + "\n";
  summary += "final_gamma = " + format_double(art.final_gamma) + "\n";
  summary += "final_mean_return = " + format_double(art.final_mean_return) + "\n";
  summary += "env_steps = " + std::to_string(art.env_steps) + "\n";
  summary += "wall_clock_s = " + format_double(art.wall_clock_s) + "\n";
  art.summary_path = (dir / (stem + ".summary")).string();
  write_text_file(art.summary_path, summary);
  return art;
}

SweepResult sweep(const ExperimentConfig& config, const std::vector<int>& seeds) {
  if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
  SweepResult result;
  std::vector<std::vector<MetricsRow>> rows;
  for (int seed : seeds) {
    try {
      RunArtifacts art = run_experiment(config, seed);
      rows.push_back(art.rows);
      result.runs.push_back(std::move(art));
    } catch (const Error& e) {
      result.failures.push_back("seed " + std::to_string(seed) + ": " +
                                e.what());
    }
  }
  if (!rows.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir = run_directory(config);
    fs::create_directories(dir);
    result.aggregate_path = (dir / "aggregate.csv").string();
    write_text_file(result.aggregate_path,
                    write_csv(aggregate_runs(rows, config.fd_check)));
  }
  return result;
}

namespace {

// theta'(z) the way the engine defines it: optimizer statistics (and the
// clip factor) are functions of the nominal gradient only, so the update is
// affine in the gradient and a perturbed z moves theta' along the nominal
// step's slope.  Replaying the full optimizer at z +/- eps would instead
// re-estimate the statistics from the perturbed gradient and measure a
// different derivative than the one the dual engine computes.
struct FrozenInnerStep {
  std::vector<int> trainable;
  std::vector<Tensor> nominal_grads;
  std::vector<Tensor> slope;
  AgentParams nominal_updated;  // values only

  AgentParams at(const AgentParams& agent, const MetaParams& meta_z,
                 const TrajectoryBatch& inner_batch,
                 const MetaLossConfig& cfg) const {
    const std::vector<Tensor> g =
        inner_loss_gradients(agent, meta_z, inner_batch, cfg);
    AgentParams out = nominal_updated;
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      Tensor& t = out.tensors[static_cast<std::size_t>(trainable[k])].value;
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] += slope[k][i] * (g[k][i] - nominal_grads[k][i]);
      }
    }
    return out;
  }
};

// Performs the nominal inner step (advancing `opt` exactly like
// inner_update would) and captures everything needed to evaluate theta'(z)
// at perturbed z with the statistics held fixed.
FrozenInnerStep freeze_inner_step(const AgentParams& agent,
                                  const MetaParams& meta,
                                  const TrajectoryBatch& inner_batch,
                                  const MetaLossConfig& cfg, Optimizer& opt) {
  FrozenInnerStep f;
  f.trainable = agent.inner_trainable();
  f.nominal_grads = inner_loss_gradients(agent, meta, inner_batch, cfg);
  std::vector<DualTensor> tparams;
  std::vector<DualTensor> tgrads;
  tparams.reserve(f.trainable.size());
  tgrads.reserve(f.trainable.size());
  for (std::size_t k = 0; k < f.trainable.size(); ++k) {
    tparams.push_back(
        DualTensor{agent.tensors[static_cast<std::size_t>(f.trainable[k])].value});
    tgrads.push_back(DualTensor{f.nominal_grads[k]});
  }
  const std::vector<DualTensor> stepped = opt.step(tparams, tgrads, &f.slope);
  f.nominal_updated = agent.values_only();
  for (std::size_t k = 0; k < f.trainable.size(); ++k) {
    f.nominal_updated.tensors[static_cast<std::size_t>(f.trainable[k])] =
        stepped[k];
  }
  return f;
}

}  // namespace

double meta_gradient_fd_replay(const AgentParams& agent, const MetaParams& meta,
                               const TrajectoryBatch& inner_batch,
                               const TrajectoryBatch& outer_batch,
                               const MetaLossConfig& cfg, Algorithm algorithm,
                               const BmgSpec& spec, const Optimizer& opt_snapshot,
                               double epsilon) {
  if (algorithm == Algorithm::mg) {
    Optimizer opt = opt_snapshot;
    const FrozenInnerStep frozen =
        freeze_inner_step(agent, meta, inner_batch, cfg, opt);
    const auto objective = [&](double z) {
      MetaParams m = meta;
      m.z = z;
      const AgentParams updated = frozen.at(agent, m, inner_batch, cfg);
      Tape tape(false);
      const std::vector<Var> vars = register_agent(tape, updated, false);
      const LossResult o =
          outer_loss(tape, updated, vars, outer_batch, cfg.outer,
                     cfg.outer_source, DualScalar::constant(gamma_of_logit(m).v));
      return tape.scalar_value(o.loss);
    };
    return finite_diff_meta_gradient(objective, meta.z, epsilon);
  }

  // freeze the bootstrap target exactly as the engine built it (the nominal
  // step advances `replay` just like the engine's optimizer), then
  // differentiate only the updated-policy side of the matching KL
  Optimizer replay = opt_snapshot;
  const FrozenInnerStep frozen =
      freeze_inner_step(agent, meta, inner_batch, cfg, replay);
  std::vector<TrajectoryBatch> target_batches;
  if (spec.target_steps > 1) target_batches.push_back(inner_batch);
  const AgentParams target = bmg_target(frozen.nominal_updated, meta,
                                        target_batches, outer_batch, cfg, spec,
                                        replay);
  const Tensor target_lp = policy_log_probs(target, outer_batch.obs).value;
  const auto objective = [&](double z) {
    MetaParams m = meta;
    m.z = z;
    const AgentParams upd = frozen.at(agent, m, inner_batch, cfg);
    const Tensor lp = policy_log_probs(upd, outer_batch.obs).value;
    const int rows = lp.dim(0);
    const int actions = lp.dim(1);
    double kl = 0.0;
    for (int r = 0; r < rows; ++r) {
      for (int a = 0; a < actions; ++a) {
        const std::size_t i = static_cast<std::size_t>(r) * actions + a;
        if (spec.reverse_kl) {
          kl += std::exp(lp[i]) * (lp[i] - target_lp[i]);
        } else {
          kl += std::exp(target_lp[i]) * (target_lp[i] - lp[i]);
        }
      }
    }
    return kl / rows;
  };
  return finite_diff_meta_gradient(objective, meta.z, epsilon);
}

}  // namespace selftune
