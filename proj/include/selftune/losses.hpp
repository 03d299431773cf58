#ifndef SELFTUNE_LOSSES_HPP
#define SELFTUNE_LOSSES_HPP

#include <optional>
#include <string>
#include <vector>

#include "selftune/envs.hpp"
#include "selftune/network.hpp"
#include "selftune/tape.hpp"
#include "selftune/tensor.hpp"

namespace selftune {

// Where the advantage estimator gets its state values.  The critic heads
// serve the conv-mlp agent; the analytic chain oracle serves the linear
// one.  Picking the gamma-discounted source inside the *outer* loss is the
// deliberate mismatch this laboratory studies; the gamma-prime sources are
// the corrected counterpart.
enum class ValueSource {
  inner_head,          // critic head trained at gamma (biased outer choice)
  outer_head,          // critic head trained at gamma-prime (fixed choice)
  oracle_gamma,        // exact chain value at gamma (biased outer choice)
  oracle_gamma_prime,  // exact chain value at gamma-prime (fixed choice)
};

std::string to_string(ValueSource source);
ValueSource value_source_from_string(const std::string& name);

// One side's loss hyper-parameters.  For the inner loss `gamma` is the
// meta-learned discount and may carry a tangent; for the outer loss it is
// the fixed gamma-prime.
struct LossHyper {
  DualScalar gamma = DualScalar::constant(0.99);
  double lambda = 1.0;
  double c_pg = 1.0;
  double c_td = 0.0;
  double c_en = 0.0;
  // true: policy-gradient weight is the advantage A; false: the action
  // value A + V (the simpler estimate the exposition uses).
  bool baseline = true;
  // Standardize the policy-gradient weights across the batch before use
  // (the misleading counter-measure of the normalization experiment).
  bool normalize = false;
};

// Advantages and value targets for every (stream, step) slot, row-major.
struct GaeResult {
  std::vector<DualScalar> advantages;
  std::vector<DualScalar> value_targets;  // advantages + values
};

// Generalized advantage estimation over B independent streams of length T.
// delta_t = r_t + gamma * V(s_{t+1}) * (1 - terminal_t) - V(s_t),
// A_t = delta_t + gamma * lambda * (1 - terminal_t) * A_{t+1}.
// Runs in dual arithmetic so d/dz flows from gamma and from the values.
GaeResult gae_advantages(const Tensor& rewards,
                         const std::vector<DualScalar>& values,
                         const std::vector<DualScalar>& bootstrap,
                         const std::vector<std::uint8_t>& terminals, int batch,
                         int steps, DualScalar gamma, double lambda);

// State values for every batch row plus the B bootstrap states.  For the
// critic sources `node` is the on-tape [B*T, 1] column the TD term trains;
// oracle sources have no trainable node.
struct ValueEstimate {
  std::vector<DualScalar> values;
  std::vector<DualScalar> bootstrap;
  std::optional<Var> node;
};

ValueEstimate estimate_values(Tape& tape, const AgentParams& agent,
                              const std::vector<Var>& vars,
                              const TrajectoryBatch& batch, ValueSource source,
                              DualScalar oracle_gamma);

// A built loss graph plus the quantities worth logging about it.
struct LossResult {
  Var loss;                          // scalar node on the caller's tape
  std::vector<DualScalar> weights;   // policy-gradient weight per row
  std::vector<DualScalar> advantages;
  double mean_entropy = 0.0;         // nats per state, under the current policy
};

// Actor-critic loss, summed over time and averaged over streams:
//   L = -c_pg/B * sum w * log pi(a|s)
//       + c_td/B * sum (V(s) - sg(target))^2
//       - c_en/B * sum H(pi(.|s))
// with w = sg(advantage or action value) under (gamma, lambda).  The
// weights enter the reverse pass as constants but keep their tangents, so
// d(loss)/dz is exact while grad_theta reproduces the three-term update.
LossResult inner_loss(Tape& tape, const AgentParams& agent,
                      const std::vector<Var>& vars,
                      const TrajectoryBatch& batch, const LossHyper& hyper,
                      ValueSource source);

// Same functional form under the primed hyper-parameters.  `source` picks
// the value estimator: the gamma-prime sources realize the corrected outer
// loss, the gamma sources reproduce the biased one.  `inner_gamma` is only
// read by the oracle_gamma source.
LossResult outer_loss(Tape& tape, const AgentParams& agent,
                      const std::vector<Var>& vars,
                      const TrajectoryBatch& batch, const LossHyper& hyper,
                      ValueSource source, DualScalar inner_gamma);

// Squared one-step TD error of the outer value head at gamma-prime,
// summed over time and averaged over streams:
//   sum (Vbar(s) - (r + gamma' * (1-terminal) * sg(Vbar(s')))) ^ 2 / B.
// Its gradient reaches only the outer head: the torso sits behind the
// gradient stop inside critic_forward.
Var outer_critic_td_loss(Tape& tape, const AgentParams& agent,
                         const std::vector<Var>& vars,
                         const TrajectoryBatch& batch, double gamma_prime);

// Mean Shannon entropy (nats) of a [rows, actions] log-probability matrix.
double entropy(const Tensor& log_probs);

}  // namespace selftune

#endif
