#include "selftune/meta.hpp"

#include <cmath>
#include <cstdlib>

#include "selftune/dualops.hpp"
#include "selftune/errors.hpp"
#include "selftune/tape.hpp"

namespace selftune {

DualScalar gamma_of_logit(const MetaParams& meta) {
  if (!(meta.lo >= 0.0) || !(meta.lo < meta.hi) || !(meta.hi <= 1.0)) {
    throw ConfigError("gamma_of_logit: bounds must satisfy 0 <= lo < hi <= 1");
  }
  if (!std::isfinite(meta.z)) {
    throw NumericalError("gamma_of_logit: non-finite logit");
  }
  const double s = 1.0 / (1.0 + std::exp(-meta.z));
  const double span = meta.hi - meta.lo;
  return {meta.lo + span * s, span * s * (1.0 - s)};
}

double logit_of_gamma(double gamma, double lo, double hi) {
  if (!(gamma > lo) || !(gamma < hi)) {
    throw ConfigError("logit_of_gamma: gamma must lie strictly inside (" +
                      std::to_string(lo) + ", " + std::to_string(hi) + ")");
  }
  return std::log((gamma - lo) / (hi - gamma));
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  std::abort();  // unreachable: all enumerators handled
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + name +
                    "' (expected sgd, adam, or rmsprop)");
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::mg: return "mg";
    case Algorithm::bmg: return "bmg";
  }
  std::abort();  // unreachable: all enumerators handled
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "mg") return Algorithm::mg;
  if (name == "bmg") return Algorithm::bmg;
  throw ConfigError("unknown algorithm '" + name + "' (expected mg or bmg)");
}

std::vector<DualTensor> Optimizer::step(const std::vector<DualTensor>& params,
                                        const std::vector<DualTensor>& grads,
                                        std::vector<Tensor>* update_slope) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: " + std::to_string(params.size()) +
                     " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].value.same_shape(grads[k].value)) {
      throw ShapeError("optimizer: gradient shape " +
                       grads[k].value.shape_str() +
                       " does not match parameter shape " +
                       params[k].value.shape_str() + " at index " +
                       std::to_string(k));
    }
  }
  const bool needs_moments = config_.kind != OptimizerKind::sgd;
  if (needs_moments && m_.empty()) {
    for (const DualTensor& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  if (needs_moments && m_.size() != params.size()) {
    throw StateError("optimizer: parameter count changed between steps");
  }
  ++step_;

  // global rescale first; the factor itself is treated as tangent-constant
  double clip_factor = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = dualops::global_norm(grads);
    if (norm > config_.clip_norm) clip_factor = config_.clip_norm / norm;
  }

  const double alpha = config_.learning_rate;
  if (update_slope) update_slope->clear();
  std::vector<DualTensor> out;
  out.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k].value;
    const Tensor& g = grads[k].value;
    const bool dual = params[k].has_tangent() || grads[k].has_tangent();
    DualTensor next{Tensor(p.shape())};
    if (dual) next.tangent = Tensor(p.shape());
    Tensor* slope = nullptr;
    if (update_slope) slope = &update_slope->emplace_back(p.shape());
    auto pt = [&](std::size_t i) {
      return params[k].has_tangent() ? (*params[k].tangent)[i] : 0.0;
    };
    auto gt = [&](std::size_t i) {
      return grads[k].has_tangent() ? clip_factor * (*grads[k].tangent)[i] : 0.0;
    };
    switch (config_.kind) {
      case OptimizerKind::sgd: {
        for (std::size_t i = 0; i < p.size(); ++i) {
          next.value[i] = p[i] - alpha * clip_factor * g[i];
          if (dual) (*next.tangent)[i] = pt(i) - alpha * gt(i);
          if (slope) (*slope)[i] = -alpha * clip_factor;
        }
        break;
      }
      case OptimizerKind::rmsprop: {
        Tensor& acc = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = clip_factor * g[i];
          acc[i] = config_.rms_decay * acc[i] +
                   (1.0 - config_.rms_decay) * gi * gi;
          const double denom = std::sqrt(acc[i] + config_.rms_eps);
          next.value[i] = p[i] - alpha * gi / denom;
          // the accumulator is a statistic: no tangent flows through it
          if (dual) (*next.tangent)[i] = pt(i) - alpha * gt(i) / denom;
          if (slope) (*slope)[i] = -alpha * clip_factor / denom;
        }
        break;
      }
      case OptimizerKind::adam: {
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        const double bc1 = 1.0 - std::pow(config_.beta1, step_);
        const double bc2 = 1.0 - std::pow(config_.beta2, step_);
        const double tangent_scale = (1.0 - config_.beta1) / bc1;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = clip_factor * g[i];
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
          const double denom = std::sqrt(v[i] / bc2) + config_.adam_eps;
          next.value[i] = p[i] - alpha * (m[i] / bc1) / denom;
          // history and second moment are statistics; only the current
          // gradient's contribution to the first moment is differentiated
          if (dual) (*next.tangent)[i] = pt(i) - alpha * tangent_scale * gt(i) / denom;
          if (slope) (*slope)[i] = -alpha * tangent_scale * clip_factor / denom;
        }
        break;
      }
    }
    if (!next.value.all_finite() ||
        (next.has_tangent() && !next.tangent->all_finite())) {
      throw NumericalError("optimizer: non-finite update at parameter index " +
                           std::to_string(k));
    }
    out.push_back(std::move(next));
  }
  return out;
}

namespace {

// Gradient of `loss_node` over the inner-trainable tensors, pushed through
// the optimizer; everything else is copied across unchanged.
AgentParams apply_inner_step(Tape& tape, Var loss_node,
                             const AgentParams& agent,
                             const std::vector<Var>& vars, Optimizer& opt) {
  const std::vector<int> trainable = agent.inner_trainable();
  std::vector<Var> tvars;
  std::vector<DualTensor> tparams;
  tvars.reserve(trainable.size());
  tparams.reserve(trainable.size());
  for (int idx : trainable) {
    tvars.push_back(vars[static_cast<std::size_t>(idx)]);
    tparams.push_back(agent.tensors[static_cast<std::size_t>(idx)]);
  }
  const std::vector<DualTensor> grads = tape.gradient(loss_node, tvars);
  const std::vector<DualTensor> stepped = opt.step(tparams, grads);
  AgentParams out = agent;
  for (std::size_t k = 0; k < trainable.size(); ++k) {
    out.tensors[static_cast<std::size_t>(trainable[k])] = stepped[k];
  }
  return out;
}

}  // namespace

AgentParams inner_update(const AgentParams& agent, const MetaParams& meta,
                         const TrajectoryBatch& batch,
                         const MetaLossConfig& cfg, Optimizer& opt,
                         double* inner_loss_value, double* inner_entropy) {
  LossHyper hyper = cfg.inner;
  hyper.gamma = gamma_of_logit(meta);
  Tape tape;
  std::vector<Var> vars = register_agent(tape, agent, agent.inner_trainable());
  LossResult r = inner_loss(tape, agent, vars, batch, hyper, cfg.inner_source);
  if (inner_loss_value) *inner_loss_value = tape.scalar_value(r.loss);
  if (inner_entropy) *inner_entropy = r.mean_entropy;
  return apply_inner_step(tape, r.loss, agent, vars, opt);
}

std::vector<Tensor> inner_loss_gradients(const AgentParams& agent,
                                         const MetaParams& meta,
                                         const TrajectoryBatch& batch,
                                         const MetaLossConfig& cfg) {
  LossHyper hyper = cfg.inner;
  hyper.gamma = DualScalar::constant(gamma_of_logit(meta).v);
  const AgentParams plain = agent.values_only();
  Tape tape;
  std::vector<Var> vars = register_agent(tape, plain, plain.inner_trainable());
  LossResult r = inner_loss(tape, plain, vars, batch, hyper, cfg.inner_source);
  const std::vector<int> trainable = plain.inner_trainable();
  std::vector<Var> tvars;
  tvars.reserve(trainable.size());
  for (int idx : trainable) tvars.push_back(vars[static_cast<std::size_t>(idx)]);
  const std::vector<DualTensor> grads = tape.gradient(r.loss, tvars);
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (const DualTensor& g : grads) out.push_back(g.value);
  return out;
}

MetaGradientResult mg_meta_gradient(const AgentParams& agent,
                                    const MetaParams& meta,
                                    const TrajectoryBatch& inner_batch,
                                    const TrajectoryBatch& outer_batch,
                                    const MetaLossConfig& cfg, Optimizer& opt) {
  MetaGradientResult result;
  result.updated = inner_update(agent, meta, inner_batch, cfg, opt,
                                &result.inner_loss_value,
                                &result.inner_entropy);
  // forward-mode only: theta' enters as constants whose tangents carry
  // d(theta')/dz, so the outer loss needs no reverse pass at all
  Tape tape(false);
  std::vector<Var> vars = register_agent(tape, result.updated, false);
  LossResult o = outer_loss(tape, result.updated, vars, outer_batch, cfg.outer,
                            cfg.outer_source, gamma_of_logit(meta));
  result.meta_gradient = tape.meta_directional_derivative(o.loss);
  result.outer_loss_value = tape.scalar_value(o.loss);
  result.outer_weights = std::move(o.weights);
  return result;
}

AgentParams bmg_target(const AgentParams& updated, const MetaParams& meta,
                       const std::vector<TrajectoryBatch>& target_inner_batches,
                       const TrajectoryBatch& outer_batch,
                       const MetaLossConfig& cfg, const BmgSpec& spec,
                       Optimizer target_opt, double* outer_loss_value,
                       std::vector<DualScalar>* outer_weights) {
  if (spec.target_steps < 1) {
    throw ConfigError("bmg_target: target_steps must be at least 1");
  }
  if (spec.target_steps > 1 && target_inner_batches.empty()) {
    throw ConfigError(
        "bmg_target: inner-loss target steps need at least one batch");
  }
  // the target is a look-ahead at the current gamma value; no tangents
  const DualScalar gamma_now =
      DualScalar::constant(gamma_of_logit(meta).v);
  AgentParams theta = updated.values_only();
  LossHyper inner_hyper = cfg.inner;
  inner_hyper.gamma = gamma_now;
  for (int k = 0; k + 1 < spec.target_steps; ++k) {
    const TrajectoryBatch& batch =
        target_inner_batches[static_cast<std::size_t>(k) %
                             target_inner_batches.size()];
    Tape tape;
    std::vector<Var> vars = register_agent(tape, theta, theta.inner_trainable());
    LossResult r =
        inner_loss(tape, theta, vars, batch, inner_hyper, cfg.inner_source);
    theta = apply_inner_step(tape, r.loss, theta, vars, target_opt);
  }
  Tape tape;
  std::vector<Var> vars = register_agent(tape, theta, theta.inner_trainable());
  LossResult o = outer_loss(tape, theta, vars, outer_batch, cfg.outer,
                            cfg.outer_source, gamma_now);
  if (outer_loss_value) *outer_loss_value = tape.scalar_value(o.loss);
  if (outer_weights) *outer_weights = std::move(o.weights);
  return apply_inner_step(tape, o.loss, theta, vars, target_opt);
}

MetaGradientResult bmg_meta_gradient(const AgentParams& agent,
                                     const MetaParams& meta,
                                     const TrajectoryBatch& inner_batch,
                                     const TrajectoryBatch& outer_batch,
                                     const MetaLossConfig& cfg,
                                     const BmgSpec& spec, Optimizer& opt) {
  MetaGradientResult result;
  result.updated = inner_update(agent, meta, inner_batch, cfg, opt,
                                &result.inner_loss_value,
                                &result.inner_entropy);
  std::vector<TrajectoryBatch> target_batches;
  if (spec.target_steps > 1) target_batches.push_back(inner_batch);
  const AgentParams target = bmg_target(
      result.updated, meta, target_batches, outer_batch, cfg, spec,
      /*snapshot of the state after the inner step*/ opt,
      &result.outer_loss_value, &result.outer_weights);

  // policy matching on the matching batch's states, in plain dual
  // arithmetic: the target side is tangent-free, the updated side carries
  // d(log pi)/dz
  const Tensor target_lp = policy_log_probs(target, outer_batch.obs).value;
  const DualTensor updated_lp = policy_log_probs(result.updated, outer_batch.obs);
  const int rows = target_lp.dim(0);
  const int actions = target_lp.dim(1);
  DualScalar kl(0.0, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int a = 0; a < actions; ++a) {
      const std::size_t i = static_cast<std::size_t>(r) * actions + a;
      const DualScalar lp_upd{updated_lp.value[i],
                              updated_lp.has_tangent() ? (*updated_lp.tangent)[i]
                                                       : 0.0};
      if (spec.reverse_kl) {
        // KL(pi_theta' || pi_target)
        kl = kl + exp(lp_upd) * (lp_upd - target_lp[i]);
      } else {
        // KL(pi_target || pi_theta')
        kl = kl + std::exp(target_lp[i]) * (DualScalar::constant(target_lp[i]) - lp_upd);
      }
    }
  }
  kl = kl * (1.0 / rows);
  result.matching_loss = kl.v;
  result.meta_gradient = kl.t;
  return result;
}

double meta_update(Optimizer& meta_opt, double z, double meta_grad) {
  if (!std::isfinite(meta_grad)) {
    throw NumericalError("meta_update: non-finite meta-gradient");
  }
  const std::vector<DualTensor> params{DualTensor{Tensor::scalar(z)}};
  const std::vector<DualTensor> grads{DualTensor{Tensor::scalar(meta_grad)}};
  const std::vector<DualTensor> next = meta_opt.step(params, grads);
  return next[0].value[0];
}

}  // namespace selftune
