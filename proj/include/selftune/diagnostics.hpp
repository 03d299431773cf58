#ifndef SELFTUNE_DIAGNOSTICS_HPP
#define SELFTUNE_DIAGNOSTICS_HPP

#include <functional>
#include <string>
#include <vector>

#include "selftune/envs.hpp"
#include "selftune/losses.hpp"
#include "selftune/network.hpp"
#include "selftune/tensor.hpp"

namespace selftune {

// Batch statistics of the policy-gradient weights the outer loss uses,
// aggregated per trajectory: each stream's weights are summed over its T
// steps (the same sum the loss takes) and the statistics run across the B
// streams.  A centered distribution (mean near zero) is the signature of a
// correct outer value source; a persistent offset is the signature of the
// bias.
struct AdvantageStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int count = 0;     // number of trajectories
  std::string source;  // "biased" | "fixed" | "normalized"
};

// Stats of the weights the outer loss would use on `batch`, without
// touching any parameter or optimizer state.
AdvantageStats outer_advantage_stats(const TrajectoryBatch& batch,
                                     const AgentParams& agent,
                                     const LossHyper& outer_hyper,
                                     ValueSource source,
                                     DualScalar inner_gamma);

// Same statistics straight from weights an outer_loss call already
// produced, so the training loop logs without a second forward pass.
// `steps` is the per-stream slice length T; weights are row-major (b, t).
AdvantageStats advantage_stats_from_weights(
    const std::vector<DualScalar>& weights, int steps, std::string source);

// (A - mean(A)) / std(A) across the batch.  Centered and unit-scale by
// construction; famously does not repair the biased meta-gradient.
std::vector<double> normalize_advantages(const std::vector<double>& advantages);
std::vector<DualScalar> normalize_advantages(
    const std::vector<DualScalar>& advantages);

// Central finite difference (pipeline(z+eps) - pipeline(z-eps)) / (2 eps).
// The pipeline must be a deterministic function of z (frozen batches and
// RNG); this is the ground truth every analytic meta-gradient is checked
// against.
double finite_diff_meta_gradient(const std::function<double(double)>& pipeline,
                                 double z, double epsilon);

// Relative error with a floor, for comparing a meta-gradient against its
// finite-difference oracle.
double relative_error(double a, double b);

// Result of replaying the chain oracle against brute-force enumeration.
struct OracleReport {
  double max_abs_discrepancy = 0.0;
  int states_checked = 0;
};

// Checks dc analytic values against an explicit step-by-step rollout of
// every chain: the pre-selection state under `selection_probs` plus every
// (chain, timestep) pair.
OracleReport oracle_consistency_check(const std::vector<double>& selection_probs,
                                      double gamma);

}  // namespace selftune

#endif
