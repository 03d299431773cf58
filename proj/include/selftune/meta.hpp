#ifndef SELFTUNE_META_HPP
#define SELFTUNE_META_HPP

#include <string>
#include <vector>

#include "selftune/envs.hpp"
#include "selftune/losses.hpp"
#include "selftune/network.hpp"
#include "selftune/tensor.hpp"

namespace selftune {

// The meta-parameter: an unconstrained logit squashed into (lo, hi), so the
// discount can never escape its bracket no matter what the meta-optimizer
// does.
struct MetaParams {
  double z = 0.0;
  double lo = 0.0;
  double hi = 1.0;
};

// gamma(z) = lo + (hi - lo) * sigmoid(z), with tangent d(gamma)/dz.
DualScalar gamma_of_logit(const MetaParams& meta);

// Inverse squash, for turning a starting discount into a starting logit.
double logit_of_gamma(double gamma, double lo, double hi);

enum class OptimizerKind { sgd, adam, rmsprop };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.0;
  double clip_norm = 0.0;  // 0 disables clipping
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;    // adam
  double adam_eps = 1e-8;
  double rms_decay = 0.99;  // rmsprop
  double rms_eps = 1e-8;
};

// Stateful first-order optimizer over a fixed list of tensors.  When the
// gradients (or parameters) carry meta-tangents the update runs in dual
// arithmetic with the accumulator statistics held tangent-constant: only
// the current step's dependence on the current gradient is differentiated.
// Copying an Optimizer snapshots its accumulators.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // `update_slope`, when given, receives d(theta')/d(g) per element under
  // the same tangent-constant convention (clip factor and statistics from
  // this step, held fixed).  With those statistics frozen the update is
  // affine in the gradient, so theta'(g) = theta'(g0) + slope * (g - g0)
  // exactly; finite-difference replays rely on this to perturb the
  // gradient without re-estimating statistics.
  std::vector<DualTensor> step(const std::vector<DualTensor>& params,
                               const std::vector<DualTensor>& grads,
                               std::vector<Tensor>* update_slope = nullptr);

  const OptimizerConfig& config() const { return config_; }
  int steps_taken() const { return step_; }

 private:
  OptimizerConfig config_;
  int step_ = 0;
  std::vector<Tensor> m_;  // adam first moment
  std::vector<Tensor> v_;  // adam / rmsprop second moment
};

// Everything the two meta-gradient engines need to build their losses.
// `inner.gamma` is overwritten from MetaParams on every call; `outer.gamma`
// is the fixed gamma-prime.
struct MetaLossConfig {
  LossHyper inner;
  LossHyper outer;
  ValueSource inner_source = ValueSource::oracle_gamma;
  ValueSource outer_source = ValueSource::oracle_gamma_prime;
};

// Bootstrapped-target recipe: K-1 inner-loss steps then one outer-loss
// step, and the direction of the policy-matching KL.
struct BmgSpec {
  int target_steps = 1;  // K >= 1
  // false: KL(target || updated), matching toward the bootstrap target;
  // true: the reverse direction.
  bool reverse_kl = false;
};

enum class Algorithm { mg, bmg };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

// One differentiable inner update.  Gradients of the inner loss are taken
// at `agent` for every inner-trainable tensor (the outer value head keeps
// its own optimizer and loss) and pushed through `opt` in dual arithmetic,
// so each returned tensor carries d(theta')/dz.  `inner_loss_value` and
// `inner_entropy` report the loss and mean policy entropy that produced
// the step.
AgentParams inner_update(const AgentParams& agent, const MetaParams& meta,
                         const TrajectoryBatch& batch,
                         const MetaLossConfig& cfg, Optimizer& opt,
                         double* inner_loss_value = nullptr,
                         double* inner_entropy = nullptr);

// The raw ingredient of that update: the inner-loss gradient over the
// inner-trainable tensors (in inner_trainable() order), values only, with
// gamma evaluated at `meta` and no tangents attached anywhere.
std::vector<Tensor> inner_loss_gradients(const AgentParams& agent,
                                         const MetaParams& meta,
                                         const TrajectoryBatch& batch,
                                         const MetaLossConfig& cfg);

// What a meta-gradient engine reports back to the training loop.
struct MetaGradientResult {
  double meta_gradient = 0.0;  // d(objective)/dz
  AgentParams updated;         // theta'(z), meta-tangents attached
  double inner_loss_value = 0.0;
  double outer_loss_value = 0.0;   // outer loss observed at the target step
  double matching_loss = 0.0;      // bmg only: the KL at theta'
  double inner_entropy = 0.0;      // mean policy entropy on the inner batch
  std::vector<DualScalar> outer_weights;  // pg weights the outer loss used
};

// Plain meta-gradient (two-phase): inner update on `inner_batch`, then the
// outer loss on `outer_batch` at theta'(z); the meta-gradient is the
// forward-mode derivative of that scalar.  `opt` advances by one step.
MetaGradientResult mg_meta_gradient(const AgentParams& agent,
                                    const MetaParams& meta,
                                    const TrajectoryBatch& inner_batch,
                                    const TrajectoryBatch& outer_batch,
                                    const MetaLossConfig& cfg, Optimizer& opt);

// The bootstrapped target: from theta' (values only), K-1 further
// inner-loss steps on `target_inner_batches` and one outer-loss step on
// `outer_batch`, all at the current gamma value with no tangents.  The
// optimizer is taken by value: the target continues from a snapshot of the
// inner optimizer's state and its exploration never leaks back.
AgentParams bmg_target(const AgentParams& updated, const MetaParams& meta,
                       const std::vector<TrajectoryBatch>& target_inner_batches,
                       const TrajectoryBatch& outer_batch,
                       const MetaLossConfig& cfg, const BmgSpec& spec,
                       Optimizer target_opt, double* outer_loss_value = nullptr,
                       std::vector<DualScalar>* outer_weights = nullptr);

// Bootstrapped meta-gradient: inner update, bootstrap target, then the
// policy-matching KL between pi_target and pi_theta' averaged over the
// matching batch's states; the meta-gradient is d(KL)/dz through theta'.
MetaGradientResult bmg_meta_gradient(const AgentParams& agent,
                                     const MetaParams& meta,
                                     const TrajectoryBatch& inner_batch,
                                     const TrajectoryBatch& outer_batch,
                                     const MetaLossConfig& cfg,
                                     const BmgSpec& spec, Optimizer& opt);

// One meta-optimizer step on the logit; returns the new z.  The
// meta-optimizer is an Optimizer over the single scalar, so a configured
// clip norm caps |meta_grad| before the step.
double meta_update(Optimizer& meta_opt, double z, double meta_grad);

}  // namespace selftune

#endif
