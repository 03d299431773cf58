#include "selftune/network.hpp"

#include <Eigen/Dense>

#include "selftune/errors.hpp"
#include "selftune/rng.hpp"

namespace selftune {

NetworkSpec NetworkSpec::linear(std::vector<int> obs_shape, int actions) {
  NetworkSpec s;
  s.architecture = "linear";
  s.obs_shape = std::move(obs_shape);
  s.actions = actions;
  return s;
}

NetworkSpec NetworkSpec::conv_mlp(std::vector<int> obs_shape, int actions) {
  NetworkSpec s;
  s.architecture = "conv-mlp";
  s.obs_shape = std::move(obs_shape);
  s.actions = actions;
  return s;
}

std::vector<int> AgentParams::inner_trainable() const {
  std::vector<int> idx = policy;
  idx.insert(idx.end(), torso.begin(), torso.end());
  idx.insert(idx.end(), inner_head.begin(), inner_head.end());
  return idx;
}

AgentParams AgentParams::values_only() const {
  AgentParams out = *this;
  for (DualTensor& t : out.tensors) t = t.values_only();
  return out;
}

namespace {

// Orthogonalized Gaussian init: QR of a Gaussian draw, columns sign-fixed
// by the R diagonal so the result is a deterministic function of the draw.
Tensor orthogonal(Rng& rng, int fan_in, int fan_out, double gain) {
  const bool tall = fan_in >= fan_out;
  const int rows = tall ? fan_in : fan_out;
  const int cols = tall ? fan_out : fan_in;
  Eigen::MatrixXd g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (int j = 0; j < cols; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  Tensor out({fan_in, fan_out});
  for (int i = 0; i < fan_in; ++i)
    for (int j = 0; j < fan_out; ++j)
      out[static_cast<std::size_t>(i) * fan_out + j] =
          gain * (tall ? q(i, j) : q(j, i));
  return out;
}

// Conv kernel [O, C, k, k] with orthonormal rows over the C*k*k fan-in.
Tensor orthogonal_conv(Rng& rng, int out_ch, int in_ch, int k, double gain) {
  Tensor flat = orthogonal(rng, in_ch * k * k, out_ch, gain);  // [C*k*k, O]
  Tensor w({out_ch, in_ch, k, k});
  const int fan_in = in_ch * k * k;
  for (int o = 0; o < out_ch; ++o)
    for (int f = 0; f < fan_in; ++f)
      w[static_cast<std::size_t>(o) * fan_in + f] =
          flat[static_cast<std::size_t>(f) * out_ch + o];
  return w;
}

constexpr double kReluGain = 1.4142135623730951;  // sqrt(2)

void check_obs(const NetworkSpec& spec, const Tensor& obs) {
  const bool ok =
      spec.is_linear()
          ? obs.ndim() == 2 && obs.dim(1) == spec.obs_shape[0]
          : obs.ndim() == 4 && obs.dim(1) == spec.obs_shape[0] &&
                obs.dim(2) == spec.obs_shape[1] && obs.dim(3) == spec.obs_shape[2];
  if (!ok) {
    throw ShapeError("network: observation batch " + obs.shape_str() +
                     " does not match spec '" + spec.architecture + "'");
  }
}

// Shared conv tower: conv-relu-conv-relu-flatten-dense-relu.
Var tower(Tape& t, const std::vector<Var>& v, int base, Var obs) {
  Var h = t.relu(t.bias_add_channels(t.conv2d(obs, v[base]), v[base + 1]));
  h = t.relu(t.bias_add_channels(t.conv2d(h, v[base + 2]), v[base + 3]));
  h = t.flatten2d(h);
  return t.relu(t.bias_add(t.matmul(h, v[base + 4]), v[base + 5]));
}

}  // namespace

AgentParams init_agent(const NetworkSpec& spec, std::uint64_t seed) {
  AgentParams agent;
  agent.spec = spec;
  auto push = [&](Tensor v, std::vector<int>& group) {
    group.push_back(static_cast<int>(agent.tensors.size()));
    agent.tensors.emplace_back(std::move(v));
  };
  if (spec.is_linear()) {
    // zero weights: the uniform policy is the deterministic starting point
    push(Tensor({spec.obs_shape[0], spec.actions}), agent.policy);
    push(Tensor({spec.actions}), agent.policy);
    return agent;
  }
  if (spec.architecture != "conv-mlp") {
    throw ConfigError("init_agent: unknown architecture '" + spec.architecture +
                      "'");
  }
  const int C = spec.obs_shape[0];
  const int flat = spec.conv2_channels * spec.obs_shape[1] * spec.obs_shape[2];
  int stream = 0;
  auto next_rng = [&] { return Rng::substream(seed, static_cast<std::uint64_t>(stream++)); };
  auto conv_w = [&](int out_ch, int in_ch, double gain) {
    Rng r = next_rng();
    return orthogonal_conv(r, out_ch, in_ch, 3, gain);
  };
  auto dense_w = [&](int in, int out, double gain) {
    Rng r = next_rng();
    return orthogonal(r, in, out, gain);
  };

  for (int stackIsCritic = 0; stackIsCritic < 2; ++stackIsCritic) {
    std::vector<int>& group = stackIsCritic ? agent.torso : agent.policy;
    push(conv_w(spec.conv1_channels, C, kReluGain), group);
    push(Tensor({spec.conv1_channels}), group);
    push(conv_w(spec.conv2_channels, spec.conv1_channels, kReluGain), group);
    push(Tensor({spec.conv2_channels}), group);
    push(dense_w(flat, spec.hidden, kReluGain), group);
    push(Tensor({spec.hidden}), group);
    if (!stackIsCritic) {
      // zero final layer: exactly uniform initial policy
      push(Tensor({spec.hidden, spec.actions}), group);
      push(Tensor({spec.actions}), group);
    }
  }
  push(dense_w(spec.hidden, 1, 1.0), agent.inner_head);
  push(Tensor({1}), agent.inner_head);
  push(dense_w(spec.hidden, 1, 1.0), agent.outer_head);
  push(Tensor({1}), agent.outer_head);
  return agent;
}

std::vector<Var> register_agent(Tape& tape, const AgentParams& agent,
                                bool trainable) {
  std::vector<Var> vars;
  vars.reserve(agent.tensors.size());
  for (const DualTensor& t : agent.tensors) {
    vars.push_back(trainable ? tape.param(t) : tape.constant(t));
  }
  return vars;
}

std::vector<Var> register_agent(Tape& tape, const AgentParams& agent,
                                const std::vector<int>& trainable) {
  std::vector<bool> is_param(agent.tensors.size(), false);
  for (int idx : trainable) is_param[static_cast<std::size_t>(idx)] = true;
  std::vector<Var> vars;
  vars.reserve(agent.tensors.size());
  for (std::size_t k = 0; k < agent.tensors.size(); ++k) {
    vars.push_back(is_param[k] ? tape.param(agent.tensors[k])
                               : tape.constant(agent.tensors[k]));
  }
  return vars;
}

Var policy_forward(Tape& t, const AgentParams& agent,
                   const std::vector<Var>& v, Var obs) {
  check_obs(agent.spec, t.value(obs));
  if (agent.spec.is_linear()) {
    return t.log_softmax(
        t.bias_add(t.matmul(obs, v[agent.policy[0]]), v[agent.policy[1]]));
  }
  Var h = tower(t, v, agent.policy[0], obs);
  return t.log_softmax(
      t.bias_add(t.matmul(h, v[agent.policy[6]]), v[agent.policy[7]]));
}

std::pair<Var, Var> critic_forward(Tape& t, const AgentParams& agent,
                                   const std::vector<Var>& v, Var obs) {
  if (agent.spec.is_linear()) {
    throw ConfigError(
        "critic_forward: the linear architecture has no critic network; "
        "Discounting Chain uses the analytic oracle");
  }
  check_obs(agent.spec, t.value(obs));
  Var h = tower(t, v, agent.torso[0], obs);
  Var inner =
      t.bias_add(t.matmul(h, v[agent.inner_head[0]]), v[agent.inner_head[1]]);
  Var outer = t.bias_add(t.matmul(t.stop_gradient(h), v[agent.outer_head[0]]),
                         v[agent.outer_head[1]]);
  return {inner, outer};
}

DualTensor policy_log_probs(const AgentParams& agent, const Tensor& obs) {
  Tape t(false);
  std::vector<Var> v = register_agent(t, agent, false);
  Var lp = policy_forward(t, agent, v, t.constant(DualTensor{obs}));
  return t.dual(lp);
}

DualTensor policy_probs(const AgentParams& agent, const Tensor& obs) {
  Tape t(false);
  std::vector<Var> v = register_agent(t, agent, false);
  Var lp = policy_forward(t, agent, v, t.constant(DualTensor{obs}));
  return t.dual(t.exp(lp));
}

std::pair<DualTensor, DualTensor> critic_values(const AgentParams& agent,
                                                const Tensor& obs) {
  Tape t(false);
  std::vector<Var> v = register_agent(t, agent, false);
  auto [inner, outer] = critic_forward(t, agent, v, t.constant(DualTensor{obs}));
  return {t.dual(inner), t.dual(outer)};
}

}  // namespace selftune
