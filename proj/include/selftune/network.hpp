#ifndef SELFTUNE_NETWORK_HPP
#define SELFTUNE_NETWORK_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "selftune/tape.hpp"
#include "selftune/tensor.hpp"

namespace selftune {

// Architecture description.  "linear" is a single affine map from the
// observation to action logits with no critic (values come from the
// analytic oracle); "conv-mlp" is a pair of disjoint conv towers for policy
// and critic, the critic ending in two value heads off a shared torso.
struct NetworkSpec {
  std::string architecture;
  std::vector<int> obs_shape;
  int actions = 0;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int hidden = 128;

  bool is_linear() const { return architecture == "linear"; }
  int obs_volume() const {
    int v = 1;
    for (int d : obs_shape) v *= d;
    return v;
  }

  static NetworkSpec linear(std::vector<int> obs_shape, int actions);
  static NetworkSpec conv_mlp(std::vector<int> obs_shape, int actions);
};

// All learnable tensors plus index groups identifying which belong to the
// policy, the critic torso, and the two value heads.
struct AgentParams {
  NetworkSpec spec;
  std::vector<DualTensor> tensors;
  std::vector<int> policy;
  std::vector<int> torso;
  std::vector<int> inner_head;
  std::vector<int> outer_head;

  // Indices updated by the inner optimizer (everything except the outer
  // head, which has its own training signal and optimizer).
  std::vector<int> inner_trainable() const;

  // Copy with all tangent channels dropped.
  AgentParams values_only() const;
};

// Deterministic initialization: orthogonalized Gaussian weights (gain
// sqrt(2) into ReLU layers, 1 elsewhere), zero biases, and a zero final
// policy layer so the initial policy is exactly uniform.
AgentParams init_agent(const NetworkSpec& spec, std::uint64_t seed);

// Place every tensor of `agent` on the tape, as `param` leaves (trainable)
// or `constant` leaves.  The returned handles align with agent.tensors.
std::vector<Var> register_agent(Tape& tape, const AgentParams& agent,
                                bool trainable);

// Mixed registration: the listed indices become params, the rest constants.
std::vector<Var> register_agent(Tape& tape, const AgentParams& agent,
                                const std::vector<int>& trainable);

// Log-probabilities [rows, actions] for a stacked observation batch.
Var policy_forward(Tape& tape, const AgentParams& agent,
                   const std::vector<Var>& vars, Var obs);

// Both critic heads, each [rows, 1], from one torso pass.  The outer head
// reads the torso through a gradient stop.  ConfigError under "linear".
std::pair<Var, Var> critic_forward(Tape& tape, const AgentParams& agent,
                                   const std::vector<Var>& vars, Var obs);

// Convenience dual evaluations on throwaway non-recording tapes; tangents
// on the parameters propagate into the results.
DualTensor policy_probs(const AgentParams& agent, const Tensor& obs);
DualTensor policy_log_probs(const AgentParams& agent, const Tensor& obs);
std::pair<DualTensor, DualTensor> critic_values(const AgentParams& agent,
                                                const Tensor& obs);

}  // namespace selftune

#endif
