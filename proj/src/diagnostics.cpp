#include "selftune/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "selftune/errors.hpp"
#include "selftune/losses.hpp"
#include "selftune/tape.hpp"

namespace selftune {

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

template <typename Value, typename Get>
Moments population_moments(const std::vector<Value>& xs, Get get) {
  double mean = 0.0;
  for (const Value& x : xs) mean += get(x);
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (const Value& x : xs) {
    const double d = get(x) - mean;
    var += d * d;
  }
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

AdvantageStats advantage_stats_from_weights(
    const std::vector<DualScalar>& weights, int steps, std::string source) {
  AdvantageStats stats;
  stats.source = std::move(source);
  if (weights.empty()) return stats;
  if (steps <= 0 || weights.size() % static_cast<std::size_t>(steps) != 0) {
    throw ShapeError(
        "advantage_stats_from_weights: weight count is not a multiple of the "
        "step count");
  }
  const std::size_t streams = weights.size() / static_cast<std::size_t>(steps);
  std::vector<double> per_trajectory(streams, 0.0);
  for (std::size_t b = 0; b < streams; ++b) {
    for (int t = 0; t < steps; ++t) {
      per_trajectory[b] += weights[b * static_cast<std::size_t>(steps) +
                                   static_cast<std::size_t>(t)]
                               .v;
    }
  }
  stats.count = static_cast<int>(streams);
  const Moments m = population_moments(per_trajectory, [](double w) { return w; });
  stats.mean = m.mean;
  stats.std = m.std;
  return stats;
}

AdvantageStats outer_advantage_stats(const TrajectoryBatch& batch,
                                     const AgentParams& agent,
                                     const LossHyper& outer_hyper,
                                     ValueSource source,
                                     DualScalar inner_gamma) {
  Tape tape(false);
  std::vector<Var> vars = register_agent(tape, agent, false);
  LossResult result =
      outer_loss(tape, agent, vars, batch, outer_hyper, source, inner_gamma);
  const bool biased = source == ValueSource::inner_head ||
                      source == ValueSource::oracle_gamma;
  return advantage_stats_from_weights(
      result.weights, batch.steps,
      outer_hyper.normalize ? "normalized"
            : biased        ? "biased"
                            : "fixed");
}

std::vector<double> normalize_advantages(const std::vector<double>& advantages) {
  if (advantages.size() < 2) {
    throw DegenerateBatchError(
        "normalize_advantages: need at least two advantages");
  }
  const Moments m = population_moments(advantages, [](double a) { return a; });
  if (m.std == 0.0) {
    throw DegenerateBatchError(
        "normalize_advantages: zero standard deviation across the batch");
  }
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    out[i] = (advantages[i] - m.mean) / m.std;
  }
  return out;
}

std::vector<DualScalar> normalize_advantages(
    const std::vector<DualScalar>& advantages) {
  if (advantages.size() < 2) {
    throw DegenerateBatchError(
        "normalize_advantages: need at least two advantages");
  }
  const double inv_n = 1.0 / static_cast<double>(advantages.size());
  DualScalar mean(0.0, 0.0);
  for (DualScalar a : advantages) mean = mean + a;
  mean = mean * inv_n;
  DualScalar var(0.0, 0.0);
  for (DualScalar a : advantages) {
    const DualScalar d = a - mean;
    var = var + d * d;
  }
  var = var * inv_n;
  if (var.v == 0.0) {
    throw DegenerateBatchError(
        "normalize_advantages: zero standard deviation across the batch");
  }
  const DualScalar std = sqrt(var);
  std::vector<DualScalar> out(advantages.size());
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    out[i] = (advantages[i] - mean) / std;
  }
  return out;
}

double finite_diff_meta_gradient(const std::function<double(double)>& pipeline,
                                 double z, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw ConfigError("finite_diff_meta_gradient: epsilon must be positive");
  }
  const double hi = pipeline(z + epsilon);
  const double lo = pipeline(z - epsilon);
  if (!std::isfinite(hi) || !std::isfinite(lo)) {
    throw NumericalError(
        "finite_diff_meta_gradient: pipeline evaluated non-finite");
  }
  return (hi - lo) / (2.0 * epsilon);
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / denom;
}

OracleReport oracle_consistency_check(const std::vector<double>& selection_probs,
                                      double gamma) {
  if (selection_probs.size() != DiscountingChain::kChains) {
    throw ShapeError("oracle_consistency_check: expected " +
                     std::to_string(DiscountingChain::kChains) +
                     " selection probabilities");
  }
  OracleReport report;
  auto check = [&](double oracle, double enumerated) {
    report.max_abs_discrepancy =
        std::max(report.max_abs_discrepancy, std::abs(oracle - enumerated));
    ++report.states_checked;
  };

  // Step-by-step rollout of a single chain from `timestep`, summing the
  // discounted reward stream until the episode ends.
  auto rollout = [&](int chain, int timestep) {
    double value = 0.0;
    double discount = 1.0;
    for (int t = timestep; t < DiscountingChain::kEpisodeLen; ++t) {
      // reward is emitted on the transition whose post-step index equals
      // the chain horizon
      if (t + 1 == DiscountingChain::kHorizons[static_cast<std::size_t>(chain)]) {
        value += discount *
                 DiscountingChain::kRewards[static_cast<std::size_t>(chain)];
      }
      discount *= gamma;
    }
    return value;
  };

  for (int chain = 0; chain < DiscountingChain::kChains; ++chain) {
    for (int t = 0; t < DiscountingChain::kEpisodeLen; ++t) {
      check(DiscountingChain::analytic_value(chain, t, gamma, nullptr),
            rollout(chain, t));
    }
  }
  double pre = 0.0;
  for (int chain = 0; chain < DiscountingChain::kChains; ++chain) {
    pre += selection_probs[static_cast<std::size_t>(chain)] * rollout(chain, 0);
  }
  check(DiscountingChain::analytic_value(-1, 0, gamma, selection_probs.data()),
        pre);
  return report;
}

}  // namespace selftune
