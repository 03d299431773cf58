#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "selftune/diagnostics.hpp"
#include "selftune/envs.hpp"
#include "selftune/errors.hpp"
#include "selftune/losses.hpp"
#include "selftune/meta.hpp"
#include "selftune/network.hpp"
#include "selftune/rng.hpp"
#include "selftune/tape.hpp"
#include "testutil.hpp"

using namespace selftune;
using namespace testutil;

namespace {

TrajectoryBatch chain_batch(int batch, std::uint64_t seed) {
  Collector collector("discounting-chain", batch, seed);
  return collector.collect(DiscountingChain::kEpisodeLen, uniform_policy(5));
}

AgentParams chain_agent(std::uint64_t seed, double scale) {
  AgentParams agent = init_agent(
      NetworkSpec::linear({DiscountingChain::kObsDim}, 5), seed);
  Rng rng = Rng::substream(seed, 777);
  for (DualTensor& t : agent.tensors) t.value = randn_like(t.value, rng, scale);
  return agent;
}

// The discounting-chain inner/outer recipe the experiments run with:
// oracle values at gamma for the inner loss, exact gamma-prime oracle for
// the corrected outer loss, the same gamma oracle for the biased one.
MetaLossConfig chain_config(bool biased_outer) {
  MetaLossConfig cfg;
  cfg.inner.lambda = 0.0;
  cfg.inner.c_pg = 1.0;
  cfg.inner.c_td = 0.0;
  cfg.inner.c_en = 0.005;
  cfg.inner_source = ValueSource::oracle_gamma;
  cfg.outer.gamma = DualScalar::constant(1.0);
  cfg.outer.lambda = 0.0;
  cfg.outer.c_pg = 1.0;
  cfg.outer.c_td = 0.0;
  cfg.outer.c_en = 0.005;
  cfg.outer_source = biased_outer ? ValueSource::oracle_gamma
                                  : ValueSource::oracle_gamma_prime;
  return cfg;
}

OptimizerConfig sgd(double lr, double clip = 0.0) {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd;
  c.learning_rate = lr;
  c.clip_norm = clip;
  return c;
}

DualTensor plain(std::vector<double> values) {
  Tensor t({static_cast<int>(values.size())});
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
  return DualTensor{t};
}

DualTensor with_tangent(std::vector<double> values, std::vector<double> tans) {
  DualTensor out = plain(std::move(values));
  Tensor t(out.value.shape());
  for (std::size_t i = 0; i < tans.size(); ++i) t[i] = tans[i];
  out.tangent = t;
  return out;
}

// Outer-loss value at theta'(z) with the optimizer re-run from the same
// snapshot: the scalar whose z-derivative the plain meta-gradient claims.
double mg_objective(double z, const AgentParams& agent, const MetaParams& base,
                    const TrajectoryBatch& inner_batch,
                    const TrajectoryBatch& outer_batch,
                    const MetaLossConfig& cfg, const Optimizer& opt_snapshot) {
  MetaParams meta = base;
  meta.z = z;
  Optimizer opt = opt_snapshot;
  const AgentParams updated =
      inner_update(agent, meta, inner_batch, cfg, opt).values_only();
  Tape tape(false);
  std::vector<Var> vars = register_agent(tape, updated, false);
  LossResult o =
      outer_loss(tape, updated, vars, outer_batch, cfg.outer, cfg.outer_source,
                 DualScalar::constant(gamma_of_logit(meta).v));
  return tape.scalar_value(o.loss);
}

// KL between a frozen target policy and pi_theta'(z) over the matching
// batch's states, the scalar whose z-derivative the bootstrapped
// meta-gradient claims.
double bmg_objective(double z, const AgentParams& agent, const MetaParams& base,
                     const TrajectoryBatch& inner_batch,
                     const Tensor& matching_obs, const Tensor& target_lp,
                     const MetaLossConfig& cfg, const BmgSpec& spec,
                     const Optimizer& opt_snapshot) {
  MetaParams meta = base;
  meta.z = z;
  Optimizer opt = opt_snapshot;
  const AgentParams updated =
      inner_update(agent, meta, inner_batch, cfg, opt).values_only();
  const Tensor lp = policy_log_probs(updated, matching_obs).value;
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
}

}  // namespace

TEST_CASE("gamma squash: examples, inverse, and bracket safety") {
  const DualScalar mid = gamma_of_logit({0.0, 0.9, 1.0});
  CHECK(mid.v == doctest::Approx(0.95).epsilon(1e-14));
  CHECK(mid.t == doctest::Approx(0.025).epsilon(1e-14));

  const DualScalar snake_start = gamma_of_logit({std::log(4.0), 0.0, 1.0});
  CHECK(snake_start.v == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(snake_start.t == doctest::Approx(0.16).epsilon(1e-14));

  CHECK(logit_of_gamma(0.95, 0.9, 1.0) == doctest::Approx(0.0).epsilon(1e-14));
  for (double gamma : {0.905, 0.93, 0.987, 0.9999}) {
    const double z = logit_of_gamma(gamma, 0.9, 1.0);
    CHECK(gamma_of_logit({z, 0.9, 1.0}).v ==
          doctest::Approx(gamma).epsilon(1e-12));
  }

  // the squash can saturate onto a bound in floating point but never
  // overshoots it, and stays strictly inside for any sane logit
  for (double z : {-50.0, -8.0, -2.0, 0.0, 2.0, 8.0, 50.0}) {
    const DualScalar g = gamma_of_logit({z, 0.9, 1.0});
    CHECK(g.v >= 0.9);
    CHECK(g.v <= 1.0);
    CHECK(g.t >= 0.0);
  }
  for (double z : {-8.0, -2.0, 0.0, 2.0, 8.0}) {
    const DualScalar g = gamma_of_logit({z, 0.9, 1.0});
    CHECK(g.v > 0.9);
    CHECK(g.v < 1.0);
    CHECK(g.t > 0.0);
  }

  CHECK_THROWS_AS(gamma_of_logit({0.0, 0.9, 0.9}), ConfigError);
  CHECK_THROWS_AS(gamma_of_logit({0.0, -0.1, 1.0}), ConfigError);
  CHECK_THROWS_AS(gamma_of_logit({0.0, 0.5, 1.5}), ConfigError);
  CHECK_THROWS_AS(
      gamma_of_logit({std::numeric_limits<double>::infinity(), 0.0, 1.0}),
      NumericalError);
  CHECK_THROWS_AS(
      gamma_of_logit({std::numeric_limits<double>::quiet_NaN(), 0.0, 1.0}),
      NumericalError);
  CHECK_THROWS_AS(logit_of_gamma(0.9, 0.9, 1.0), ConfigError);
  CHECK_THROWS_AS(logit_of_gamma(1.0, 0.9, 1.0), ConfigError);
  CHECK_THROWS_AS(logit_of_gamma(0.5, 0.9, 1.0), ConfigError);
}

TEST_CASE("optimizer: sgd hand values and exact dual rule") {
  Optimizer opt(sgd(0.5));
  const std::vector<DualTensor> params{
      with_tangent({1.0, -2.0}, {0.5, 0.25})};
  const std::vector<DualTensor> grads{with_tangent({2.0, 4.0}, {1.0, -2.0})};
  const std::vector<DualTensor> next = opt.step(params, grads);
  REQUIRE(next.size() == 1);
  CHECK(next[0].value[0] == 0.0);
  CHECK(next[0].value[1] == -4.0);
  REQUIRE(next[0].has_tangent());
  // t' = pt - alpha * gt, nothing else
  CHECK((*next[0].tangent)[0] == 0.5 - 0.5 * 1.0);
  CHECK((*next[0].tangent)[1] == 0.25 - 0.5 * -2.0);
  CHECK(opt.steps_taken() == 1);

  // value-only inputs stay value-only
  Optimizer plain_opt(sgd(0.1));
  const std::vector<DualTensor> out =
      plain_opt.step({plain({1.0})}, {plain({3.0})});
  CHECK(out[0].value[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(!out[0].has_tangent());

  CHECK_THROWS_AS(opt.step({plain({1.0, 2.0})}, {plain({1.0})}), ShapeError);
  CHECK_THROWS_AS(opt.step({plain({1.0})}, {}), ShapeError);
  const double inf = std::numeric_limits<double>::infinity();
  Optimizer bad(sgd(1.0));
  CHECK_THROWS_AS(bad.step({plain({1.0})}, {plain({inf})}), NumericalError);
}

TEST_CASE("optimizer: gradient clipping rescales by the global norm") {
  OptimizerConfig cfg = sgd(1.0, 0.1);
  Optimizer opt(cfg);
  // two tensors, joint norm sqrt(0.36 + 0.64) = 1 -> factor 0.1
  const std::vector<DualTensor> params{plain({0.0}), plain({0.0})};
  const std::vector<DualTensor> grads{with_tangent({0.6}, {2.0}),
                                      with_tangent({0.8}, {-4.0})};
  const std::vector<DualTensor> next = opt.step(params, grads);
  CHECK(next[0].value[0] == doctest::Approx(-0.06).epsilon(1e-14));
  CHECK(next[1].value[0] == doctest::Approx(-0.08).epsilon(1e-14));
  // the factor is tangent-constant and multiplies the gradient tangent too
  CHECK((*next[0].tangent)[0] == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK((*next[1].tangent)[0] == doctest::Approx(0.4).epsilon(1e-14));

  // norms at or below the threshold pass through untouched
  Optimizer loose(sgd(1.0, 10.0));
  const std::vector<DualTensor> same =
      loose.step({plain({0.0})}, {plain({0.6})});
  CHECK(same[0].value[0] == -0.6);
}

TEST_CASE("optimizer: rmsprop recurrence matches a hand loop") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::rmsprop;
  cfg.learning_rate = 0.25;
  cfg.rms_decay = 0.99;
  cfg.rms_eps = 1e-8;
  Optimizer opt(cfg);

  double theta = 1.5;
  double v = 0.0;
  std::vector<DualTensor> params{plain({theta})};
  for (int t = 1; t <= 7; ++t) {
    const double g = std::sin(1.3 * t) + 0.2 * t;
    params = opt.step(params, {plain({g})});
    v = 0.99 * v + 0.01 * g * g;
    theta -= 0.25 * g / std::sqrt(v + 1e-8);
    CHECK(params[0].value[0] == doctest::Approx(theta).epsilon(1e-12));
  }
  CHECK(opt.steps_taken() == 7);

  // dual rule: the accumulator is a frozen statistic, so the tangent sees
  // only the current step's preconditioned gradient
  Optimizer fresh(cfg);
  const double g0 = 0.7;
  const std::vector<DualTensor> out = fresh.step(
      {with_tangent({2.0}, {0.3})}, {with_tangent({g0}, {1.1})});
  const double v1 = 0.01 * g0 * g0;
  const double denom = std::sqrt(v1 + 1e-8);
  CHECK(out[0].value[0] ==
        doctest::Approx(2.0 - 0.25 * g0 / denom).epsilon(1e-14));
  CHECK((*out[0].tangent)[0] ==
        doctest::Approx(0.3 - 0.25 * 1.1 / denom).epsilon(1e-14));
}

TEST_CASE("optimizer: adam recurrence matches a hand loop") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adam;
  cfg.learning_rate = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.adam_eps = 1e-8;
  Optimizer opt(cfg);

  double theta = -0.4;
  double m = 0.0, v = 0.0;
  std::vector<DualTensor> params{plain({theta})};
  for (int t = 1; t <= 7; ++t) {
    const double g = std::cos(0.9 * t) - 0.1 * t;
    params = opt.step(params, {plain({g})});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    theta -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(params[0].value[0] == doctest::Approx(theta).epsilon(1e-12));
  }

  // first step with unit gradient moves by almost exactly the learning
  // rate: mhat = vhat = 1
  Optimizer first(cfg);
  const std::vector<DualTensor> one = first.step({plain({0.0})}, {plain({1.0})});
  CHECK(one[0].value[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));

  // dual rule: only the fresh-gradient share of the first moment is live
  Optimizer fresh(cfg);
  const double g0 = -0.6, gt0 = 0.8;
  const std::vector<DualTensor> out = fresh.step(
      {with_tangent({1.0}, {-0.2})}, {with_tangent({g0}, {gt0})});
  const double bc1 = 1.0 - 0.9;
  const double bc2 = 1.0 - 0.999;
  const double vhat = (0.001 * g0 * g0) / bc2;
  const double denom = std::sqrt(vhat) + 1e-8;
  const double scale = (1.0 - 0.9) / bc1;  // = 1 on the first step
  CHECK((*out[0].tangent)[0] ==
        doctest::Approx(-0.2 - 0.1 * scale * gt0 / denom).epsilon(1e-13));

  // changing the parameter list between steps is a usage error
  Optimizer stateful(cfg);
  (void)stateful.step({plain({1.0})}, {plain({1.0})});
  CHECK_THROWS_AS(
      stateful.step({plain({1.0}), plain({2.0})}, {plain({1.0}), plain({1.0})}),
      StateError);
}

TEST_CASE("inner update: zero learning rate is an exact fixed point") {
  const AgentParams agent = chain_agent(21, 0.5);
  const TrajectoryBatch batch = chain_batch(16, 22);
  const MetaLossConfig cfg = chain_config(false);
  MetaParams meta{0.4, 0.9, 1.0};
  Optimizer opt(sgd(0.0));
  double loss = 0.0, ent = 0.0;
  const AgentParams next = inner_update(agent, meta, batch, cfg, opt, &loss, &ent);
  REQUIRE(next.tensors.size() == agent.tensors.size());
  for (std::size_t k = 0; k < next.tensors.size(); ++k) {
    const Tensor& a = agent.tensors[k].value;
    const Tensor& b = next.tensors[k].value;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == a[i]);
    if (next.tensors[k].has_tangent()) {
      for (std::size_t i = 0; i < next.tensors[k].tangent->size(); ++i) {
        CHECK((*next.tensors[k].tangent)[i] == 0.0);
      }
    }
  }
  CHECK(std::isfinite(loss));
  CHECK(ent > 0.0);
  CHECK(ent <= std::log(5.0) + 1e-12);

  // a freshly initialized linear head is the uniform policy
  const AgentParams zero = init_agent(
      NetworkSpec::linear({DiscountingChain::kObsDim}, 5), 3);
  Optimizer opt2(sgd(0.0));
  double ent2 = 0.0;
  (void)inner_update(zero, meta, batch, cfg, opt2, nullptr, &ent2);
  CHECK(ent2 == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("inner update: parameter tangents match finite differences") {
  const AgentParams agent = chain_agent(31, 0.5);
  const TrajectoryBatch batch = chain_batch(24, 32);
  const MetaLossConfig cfg = chain_config(false);
  const MetaParams meta{0.3, 0.9, 1.0};
  const Optimizer base(sgd(0.5));

  Optimizer opt = base;
  const AgentParams updated = inner_update(agent, meta, batch, cfg, opt);

  Rng rng(33);
  const std::vector<Tensor> dirs = random_directions(agent, rng);
  const double eps = 1e-5;
  auto probe_at = [&](double z) {
    MetaParams m = meta;
    m.z = z;
    Optimizer o = base;
    return inner_update(agent, m, batch, cfg, o);
  };
  const AgentParams hi = probe_at(meta.z + eps);
  const AgentParams lo = probe_at(meta.z - eps);
  for (std::size_t k = 0; k < updated.tensors.size(); ++k) {
    REQUIRE(updated.tensors[k].has_tangent());
    double analytic = 0.0, fd = 0.0;
    const Tensor& t = *updated.tensors[k].tangent;
    for (std::size_t i = 0; i < t.size(); ++i) {
      analytic += dirs[k][i] * t[i];
      fd += dirs[k][i] * (hi.tensors[k].value[i] - lo.tensors[k].value[i]) /
            (2.0 * eps);
    }
    CHECK(rel_err(analytic, fd) < 1e-5);
  }
}

TEST_CASE("plain meta-gradient matches finite differences") {
  for (int trial = 0; trial < 8; ++trial) {
    const std::uint64_t seed = 100 + 17 * static_cast<std::uint64_t>(trial);
    Rng rng(seed);
    const bool biased = trial % 2 == 0;
    const MetaLossConfig cfg = chain_config(biased);
    const AgentParams agent = chain_agent(seed + 1, 0.4);
    const TrajectoryBatch inner = chain_batch(16, seed + 2);
    const TrajectoryBatch outer = chain_batch(16, seed + 3);
    const MetaParams meta{rng.uniform(-2.0, 2.0), 0.9, 1.0};
    const Optimizer base(sgd(rng.uniform(0.1, 0.8)));

    Optimizer opt = base;
    const MetaGradientResult result =
        mg_meta_gradient(agent, meta, inner, outer, cfg, opt);
    CHECK(opt.steps_taken() == 1);
    CHECK(std::isfinite(result.meta_gradient));

    const double fd = finite_diff_meta_gradient(
        [&](double z) {
          return mg_objective(z, agent, meta, inner, outer, cfg, base);
        },
        meta.z, 1e-4);
    INFO("trial ", trial, " biased=", biased, " analytic=",
         result.meta_gradient, " fd=", fd);
    CHECK(rel_err(result.meta_gradient, fd) < 1e-5);

    // the objective value itself must agree with the replayed pipeline
    CHECK(mg_objective(meta.z, agent, meta, inner, outer, cfg, base) ==
          doctest::Approx(result.outer_loss_value).epsilon(1e-12));
  }
}

TEST_CASE("bootstrapped meta-gradient matches finite differences") {
  struct Draw {
    int target_steps;
    bool reverse_kl;
  };
  const Draw draws[] = {{1, false}, {1, true}, {3, false}, {2, true}};
  int trial = 0;
  for (const Draw& d : draws) {
    const std::uint64_t seed = 500 + 13 * static_cast<std::uint64_t>(trial++);
    Rng rng(seed);
    const MetaLossConfig cfg = chain_config(trial % 2 == 0);
    BmgSpec spec;
    spec.target_steps = d.target_steps;
    spec.reverse_kl = d.reverse_kl;
    const AgentParams agent = chain_agent(seed + 1, 0.4);
    const TrajectoryBatch inner = chain_batch(16, seed + 2);
    const TrajectoryBatch outer = chain_batch(16, seed + 3);
    const MetaParams meta{rng.uniform(-1.5, 1.5), 0.9, 1.0};
    const Optimizer base(sgd(rng.uniform(0.1, 0.6)));

    Optimizer opt = base;
    const MetaGradientResult result =
        bmg_meta_gradient(agent, meta, inner, outer, cfg, spec, opt);

    // replay the engine's target exactly: same snapshot, same batches
    Optimizer replay = base;
    const AgentParams updated = inner_update(agent, meta, inner, cfg, replay);
    std::vector<TrajectoryBatch> target_batches;
    if (spec.target_steps > 1) target_batches.push_back(inner);
    const AgentParams target =
        bmg_target(updated, meta, target_batches, outer, cfg, spec, replay);
    const Tensor target_lp = policy_log_probs(target, outer.obs).value;

    const double at_base = bmg_objective(meta.z, agent, meta, inner, outer.obs,
                                         target_lp, cfg, spec, base);
    CHECK(at_base == doctest::Approx(result.matching_loss).epsilon(1e-12));

    const double fd = finite_diff_meta_gradient(
        [&](double z) {
          return bmg_objective(z, agent, meta, inner, outer.obs, target_lp,
                               cfg, spec, base);
        },
        meta.z, 1e-4);
    INFO("target_steps=", d.target_steps, " reverse=", d.reverse_kl,
         " analytic=", result.meta_gradient, " fd=", fd);
    CHECK(rel_err(result.meta_gradient, fd) < 1e-5);
    CHECK(result.matching_loss >= 0.0);
  }
}

TEST_CASE("bootstrapped target equal to theta-prime is a stationary point") {
  // zero out every outer-loss coefficient so the bootstrap step is a no-op
  // and the target collapses onto theta' exactly; matching a distribution
  // against itself has zero loss and a vanishing meta-gradient even though
  // theta' carries live tangents
  MetaLossConfig cfg = chain_config(false);
  cfg.outer.c_pg = 0.0;
  cfg.outer.c_en = 0.0;
  BmgSpec spec;
  spec.target_steps = 1;
  const AgentParams agent = chain_agent(61, 0.5);
  const TrajectoryBatch inner = chain_batch(16, 62);
  const TrajectoryBatch outer = chain_batch(16, 63);
  const MetaParams meta{0.2, 0.9, 1.0};
  Optimizer opt(sgd(0.4));
  const MetaGradientResult result =
      bmg_meta_gradient(agent, meta, inner, outer, cfg, spec, opt);
  CHECK(result.matching_loss == 0.0);
  CHECK(std::abs(result.meta_gradient) < 1e-10);
}

TEST_CASE("bootstrapped target: configuration validation") {
  const MetaLossConfig cfg = chain_config(false);
  const AgentParams agent = chain_agent(71, 0.3);
  const TrajectoryBatch batch = chain_batch(8, 72);
  MetaParams meta{0.0, 0.9, 1.0};
  Optimizer opt(sgd(0.1));
  const AgentParams updated = inner_update(agent, meta, batch, cfg, opt);

  BmgSpec bad;
  bad.target_steps = 0;
  CHECK_THROWS_AS(bmg_target(updated, meta, {}, batch, cfg, bad, opt),
                  ConfigError);
  bad.target_steps = 2;
  CHECK_THROWS_AS(bmg_target(updated, meta, {}, batch, cfg, bad, opt),
                  ConfigError);
}

TEST_CASE("inner step is blind to the outer value source") {
  const AgentParams agent = chain_agent(81, 0.5);
  const TrajectoryBatch inner = chain_batch(16, 82);
  const TrajectoryBatch outer = chain_batch(16, 83);
  const MetaParams meta{0.1, 0.9, 1.0};
  const Optimizer base(sgd(0.5));

  Optimizer oa = base;
  Optimizer ob = base;
  const MetaGradientResult biased =
      mg_meta_gradient(agent, meta, inner, outer, chain_config(true), oa);
  const MetaGradientResult fixed =
      mg_meta_gradient(agent, meta, inner, outer, chain_config(false), ob);

  // switching the outer loss's value source must not perturb the inner
  // update at all: identical values and identical meta-tangents, bit for
  // bit
  REQUIRE(biased.updated.tensors.size() == fixed.updated.tensors.size());
  for (std::size_t k = 0; k < biased.updated.tensors.size(); ++k) {
    const DualTensor& a = biased.updated.tensors[k];
    const DualTensor& b = fixed.updated.tensors[k];
    for (std::size_t i = 0; i < a.value.size(); ++i) {
      CHECK(a.value[i] == b.value[i]);
    }
    REQUIRE(a.has_tangent() == b.has_tangent());
    if (a.has_tangent()) {
      for (std::size_t i = 0; i < a.tangent->size(); ++i) {
        CHECK((*a.tangent)[i] == (*b.tangent)[i]);
      }
    }
  }
  CHECK(biased.inner_loss_value == fixed.inner_loss_value);
  CHECK(biased.inner_entropy == fixed.inner_entropy);
  // ...while the meta-gradients themselves disagree: that difference is
  // the whole story of the outer-loss bias
  CHECK(biased.meta_gradient != fixed.meta_gradient);
}

TEST_CASE("meta update: zero gradient, clipping, and bracket safety") {
  Optimizer sgd_meta(sgd(1.0, 0.1));
  CHECK(meta_update(sgd_meta, 0.37, 0.0) == 0.37);
  // |g| above the clip moves by exactly the clip * lr
  CHECK(meta_update(sgd_meta, 0.0, 5.0) == doctest::Approx(-0.1).epsilon(1e-14));
  CHECK(meta_update(sgd_meta, 0.0, -5.0) == doctest::Approx(0.1).epsilon(1e-14));
  // below the clip it is plain sgd
  CHECK(meta_update(sgd_meta, 0.0, 0.05) ==
        doctest::Approx(-0.05).epsilon(1e-14));
  CHECK_THROWS_AS(
      meta_update(sgd_meta, 0.0, std::numeric_limits<double>::quiet_NaN()),
      NumericalError);

  OptimizerConfig adam_cfg;
  adam_cfg.kind = OptimizerKind::adam;
  adam_cfg.learning_rate = 0.1;
  Optimizer adam_meta(adam_cfg);
  CHECK(meta_update(adam_meta, 1.25, 0.0) == 1.25);

  // a hostile gradient stream cannot push gamma out of its bracket
  Optimizer wild(adam_cfg);
  double z = 0.0;
  for (int t = 0; t < 400; ++t) {
    const double g = (t < 200 ? 1.0 : -1.0) * 1e6;
    z = meta_update(wild, z, g);
    const DualScalar gamma = gamma_of_logit({z, 0.9, 1.0});
    CHECK(gamma.v >= 0.9);
    CHECK(gamma.v <= 1.0);
  }
}
