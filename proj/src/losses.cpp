#include "selftune/losses.hpp"

#include <cmath>
#include <cstdlib>

#include "selftune/diagnostics.hpp"
#include "selftune/errors.hpp"

namespace selftune {

std::string to_string(ValueSource source) {
  switch (source) {
    case ValueSource::inner_head: return "inner_head";
    case ValueSource::outer_head: return "outer_head";
    case ValueSource::oracle_gamma: return "oracle_gamma";
    case ValueSource::oracle_gamma_prime: return "oracle_gamma_prime";
  }
  std::abort();  // unreachable: all enumerators handled
}

ValueSource value_source_from_string(const std::string& name) {
  if (name == "inner_head") return ValueSource::inner_head;
  if (name == "outer_head") return ValueSource::outer_head;
  if (name == "oracle_gamma") return ValueSource::oracle_gamma;
  if (name == "oracle_gamma_prime") return ValueSource::oracle_gamma_prime;
  throw ConfigError("unknown value source '" + name +
                    "' (expected inner_head, outer_head, oracle_gamma, or "
                    "oracle_gamma_prime)");
}

GaeResult gae_advantages(const Tensor& rewards,
                         const std::vector<DualScalar>& values,
                         const std::vector<DualScalar>& bootstrap,
                         const std::vector<std::uint8_t>& terminals, int batch,
                         int steps, DualScalar gamma, double lambda) {
  if (batch <= 0 || steps <= 0) {
    throw ShapeError("gae_advantages: batch and steps must be positive");
  }
  const std::size_t rows = static_cast<std::size_t>(batch) * steps;
  if (rewards.size() != rows || values.size() != rows ||
      terminals.size() != rows ||
      bootstrap.size() != static_cast<std::size_t>(batch)) {
    throw ShapeError("gae_advantages: input sizes do not match batch " +
                     std::to_string(batch) + " x steps " +
                     std::to_string(steps));
  }
  GaeResult out;
  out.advantages.resize(rows);
  out.value_targets.resize(rows);
  for (int b = 0; b < batch; ++b) {
    DualScalar acc(0.0, 0.0);
    for (int t = steps - 1; t >= 0; --t) {
      const std::size_t i = static_cast<std::size_t>(b) * steps + t;
      const double mask = terminals[i] ? 0.0 : 1.0;
      const DualScalar next =
          t + 1 == steps ? bootstrap[static_cast<std::size_t>(b)]
                         : values[i + 1];
      const DualScalar delta =
          rewards[i] + gamma * next * mask - values[i];
      acc = delta + gamma * (lambda * mask) * acc;
      out.advantages[i] = acc;
      out.value_targets[i] = acc + values[i];
    }
  }
  return out;
}

namespace {

// Reads one value column off the tape into plain dual scalars.  Copies
// immediately: node storage may move when later ops grow the tape.
std::vector<DualScalar> column_duals(const Tape& tape, Var column) {
  const DualTensor& d = tape.dual(column);
  std::vector<DualScalar> out(d.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {d.value[i], d.has_tangent() ? (*d.tangent)[i] : 0.0};
  }
  return out;
}

std::vector<DualScalar> oracle_values(const AgentParams& agent,
                                      const Tensor& obs, DualScalar gamma) {
  const int rows = obs.dim(0);
  const DualTensor probs = policy_probs(agent, obs);
  std::vector<DualScalar> out(static_cast<std::size_t>(rows));
  std::array<DualScalar, DiscountingChain::kChains> row_probs;
  for (int r = 0; r < rows; ++r) {
    int selected = 0, timestep = 0;
    DiscountingChain::decode_obs(
        obs.data() + static_cast<std::size_t>(r) * DiscountingChain::kObsDim,
        selected, timestep);
    if (selected < 0) {
      for (int a = 0; a < DiscountingChain::kChains; ++a) {
        const std::size_t j =
            static_cast<std::size_t>(r) * DiscountingChain::kChains + a;
        row_probs[static_cast<std::size_t>(a)] = {
            probs.value[j], probs.has_tangent() ? (*probs.tangent)[j] : 0.0};
      }
    }
    out[static_cast<std::size_t>(r)] = DiscountingChain::analytic_value(
        selected, timestep, gamma, row_probs.data());
  }
  return out;
}

// Wraps plain dual scalars into a constant leaf.  The tangent channel is
// materialized only when some entry actually carries one, so tangent-free
// evaluations stay tangent-free all the way through the graph.
DualTensor dual_constant(const std::vector<DualScalar>& xs,
                         std::vector<int> shape) {
  Tensor value(shape);
  bool any_tangent = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    value[i] = xs[i].v;
    any_tangent = any_tangent || xs[i].t != 0.0;
  }
  DualTensor out{std::move(value)};
  if (any_tangent) {
    Tensor tangent(std::move(shape));
    for (std::size_t i = 0; i < xs.size(); ++i) tangent[i] = xs[i].t;
    out.tangent = std::move(tangent);
  }
  return out;
}

double mean_entropy_of(const Tensor& log_probs) {
  const int rows = log_probs.dim(0), cols = log_probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    total -= std::exp(log_probs[i]) * log_probs[i];
  }
  (void)cols;
  return rows > 0 ? total / rows : 0.0;
}

LossResult build_actor_critic_loss(Tape& tape, const AgentParams& agent,
                                   const std::vector<Var>& vars,
                                   const TrajectoryBatch& batch,
                                   const LossHyper& hyper, ValueSource source,
                                   DualScalar oracle_gamma) {
  ValueEstimate est =
      estimate_values(tape, agent, vars, batch, source, oracle_gamma);
  GaeResult gae =
      gae_advantages(batch.rewards, est.values, est.bootstrap, batch.terminals,
                     batch.batch, batch.steps, hyper.gamma, hyper.lambda);

  LossResult result;
  result.advantages = gae.advantages;
  result.weights = hyper.baseline ? gae.advantages : gae.value_targets;
  if (hyper.normalize) {
    result.weights = normalize_advantages(result.weights);
  }

  const int rows = batch.batch * batch.steps;
  const double inv_b = 1.0 / batch.batch;

  Var lp = policy_forward(tape, agent, vars, tape.constant(DualTensor{batch.obs}));
  const Tensor lp_value = tape.value(lp);  // copy before the tape grows
  result.mean_entropy = mean_entropy_of(lp_value);

  Var picked = tape.gather(lp, batch.actions);
  Var w = tape.constant(dual_constant(result.weights, {rows}));
  Var loss = tape.scale(tape.sum(tape.mul(picked, w)),
                        DualScalar::constant(-hyper.c_pg * inv_b));

  if (hyper.c_td != 0.0) {
    if (!est.node) {
      throw ConfigError(
          "loss: c_td is nonzero but the value source '" + to_string(source) +
          "' has no trainable head");
    }
    Var targets = tape.constant(dual_constant(gae.value_targets, {rows, 1}));
    Var td = tape.sum(tape.square(tape.sub(*est.node, targets)));
    loss = tape.add(loss, tape.scale(td, DualScalar::constant(hyper.c_td * inv_b)));
  }

  if (hyper.c_en != 0.0) {
    // -c_en * sum H = +c_en * sum p * log p
    Var plp = tape.sum(tape.mul(tape.exp(lp), lp));
    loss = tape.add(loss, tape.scale(plp, DualScalar::constant(hyper.c_en * inv_b)));
  }

  result.loss = loss;
  return result;
}

}  // namespace

ValueEstimate estimate_values(Tape& tape, const AgentParams& agent,
                              const std::vector<Var>& vars,
                              const TrajectoryBatch& batch, ValueSource source,
                              DualScalar oracle_gamma) {
  ValueEstimate est;
  switch (source) {
    case ValueSource::oracle_gamma:
    case ValueSource::oracle_gamma_prime: {
      if (batch.obs.ndim() != 2 ||
          batch.obs.dim(1) != DiscountingChain::kObsDim) {
        throw ConfigError(
            "estimate_values: oracle sources need discounting-chain "
            "observations, got " +
            batch.obs.shape_str());
      }
      est.values = oracle_values(agent, batch.obs, oracle_gamma);
      est.bootstrap = oracle_values(agent, batch.bootstrap_obs, oracle_gamma);
      return est;
    }
    case ValueSource::inner_head:
    case ValueSource::outer_head: {
      if (agent.spec.is_linear()) {
        throw ConfigError(
            "estimate_values: critic-head sources need the conv-mlp "
            "architecture; the linear agent uses the chain oracle");
      }
      const bool inner = source == ValueSource::inner_head;
      auto heads = critic_forward(tape, agent, vars,
                                  tape.constant(DualTensor{batch.obs}));
      Var node = inner ? heads.first : heads.second;
      est.values = column_duals(tape, node);
      est.node = node;
      auto boot = critic_forward(tape, agent, vars,
                                 tape.constant(DualTensor{batch.bootstrap_obs}));
      est.bootstrap = column_duals(tape, inner ? boot.first : boot.second);
      return est;
    }
  }
  std::abort();  // unreachable: all enumerators handled
}

LossResult inner_loss(Tape& tape, const AgentParams& agent,
                      const std::vector<Var>& vars,
                      const TrajectoryBatch& batch, const LossHyper& hyper,
                      ValueSource source) {
  if (source == ValueSource::outer_head ||
      source == ValueSource::oracle_gamma_prime) {
    throw ConfigError(
        "inner_loss: the inner estimator must be discounted at gamma; got "
        "source '" +
        to_string(source) + "'");
  }
  if (agent.spec.is_linear() && source != ValueSource::oracle_gamma) {
    throw ConfigError(
        "inner_loss: the linear agent has no critic; use oracle_gamma");
  }
  if (!agent.spec.is_linear() && source != ValueSource::inner_head) {
    throw ConfigError(
        "inner_loss: the conv-mlp agent estimates values with inner_head");
  }
  return build_actor_critic_loss(tape, agent, vars, batch, hyper, source,
                                 hyper.gamma);
}

LossResult outer_loss(Tape& tape, const AgentParams& agent,
                      const std::vector<Var>& vars,
                      const TrajectoryBatch& batch, const LossHyper& hyper,
                      ValueSource source, DualScalar inner_gamma) {
  const DualScalar oracle_gamma =
      source == ValueSource::oracle_gamma ? inner_gamma : hyper.gamma;
  return build_actor_critic_loss(tape, agent, vars, batch, hyper, source,
                                 oracle_gamma);
}

Var outer_critic_td_loss(Tape& tape, const AgentParams& agent,
                         const std::vector<Var>& vars,
                         const TrajectoryBatch& batch, double gamma_prime) {
  auto heads = critic_forward(tape, agent, vars,
                              tape.constant(DualTensor{batch.obs}));
  Var node = heads.second;
  const std::vector<DualScalar> values = column_duals(tape, node);
  auto boot = critic_forward(tape, agent, vars,
                             tape.constant(DualTensor{batch.bootstrap_obs}));
  const std::vector<DualScalar> bootstrap = column_duals(tape, boot.second);

  const int rows = batch.batch * batch.steps;
  std::vector<DualScalar> targets(static_cast<std::size_t>(rows));
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.steps; ++t) {
      const std::size_t i = batch.row(b, t);
      const double mask = batch.terminals[i] ? 0.0 : 1.0;
      const DualScalar next = t + 1 == batch.steps
                                  ? bootstrap[static_cast<std::size_t>(b)]
                                  : values[i + 1];
      // r + gamma' * sg(V(s')); reading the dual off the tape and feeding
      // it back as a constant is exactly the gradient stop
      targets[i] = batch.rewards[i] + (gamma_prime * mask) * next;
    }
  }
  Var target_node = tape.constant(dual_constant(targets, {rows, 1}));
  Var td = tape.sum(tape.square(tape.sub(node, target_node)));
  return tape.scale(td, DualScalar::constant(1.0 / batch.batch));
}

double entropy(const Tensor& log_probs) {
  if (log_probs.ndim() != 2) {
    throw ShapeError("entropy: expected [rows, actions], got " +
                     log_probs.shape_str());
  }
  return mean_entropy_of(log_probs);
}

}  // namespace selftune
