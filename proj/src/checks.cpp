#include "selftune/checks.hpp"

#include <algorithm>

#include "selftune/diagnostics.hpp"
#include "selftune/rng.hpp"
#include "selftune/runner.hpp"

namespace selftune {

CheckDraw make_check_draw(std::uint64_t base_seed, int index) {
  Rng rng = Rng::substream(base_seed, static_cast<std::uint64_t>(index));
  CheckDraw d;
  d.agent = init_agent(
      NetworkSpec::linear({DiscountingChain::kObsDim}, DiscountingChain::kChains),
      rng.bits());
  for (DualTensor& t : d.agent.tensors) {
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      t.value[i] = 0.4 * rng.normal();
    }
  }
  const PolicyFn uniform = [](const Tensor& obs) {
    return Tensor({obs.dim(0), DiscountingChain::kChains},
                  1.0 / DiscountingChain::kChains);
  };
  Collector inner_streams("discounting-chain", 16, rng.bits());
  Collector outer_streams("discounting-chain", 16, rng.bits());
  d.inner = inner_streams.collect(DiscountingChain::kEpisodeLen, uniform);
  d.outer = outer_streams.collect(DiscountingChain::kEpisodeLen, uniform);
  d.meta = MetaParams{rng.uniform(-2.0, 2.0), 0.9, 1.0};
  d.cfg.inner.lambda = 0.0;
  d.cfg.inner.c_pg = 1.0;
  d.cfg.inner.c_td = 0.0;
  d.cfg.inner.c_en = 0.005;
  d.cfg.inner_source = ValueSource::oracle_gamma;
  d.cfg.outer.gamma = DualScalar::constant(1.0);
  d.cfg.outer.lambda = 0.0;
  d.cfg.outer.c_pg = 1.0;
  d.cfg.outer.c_td = 0.0;
  d.cfg.outer.c_en = 0.005;
  d.cfg.outer_source = index % 2 == 0 ? ValueSource::oracle_gamma
                                      : ValueSource::oracle_gamma_prime;
  d.spec.target_steps = 1 + index % 3;
  d.spec.reverse_kl = (index / 2) % 2 == 1;
  // cycle the inner optimizer so the stateful update rules (and their
  // tangent-constant statistics) are exercised, not just plain sgd
  OptimizerConfig oc;
  switch (index % 3) {
    case 0: oc.kind = OptimizerKind::sgd; break;
    case 1: oc.kind = OptimizerKind::rmsprop; break;
    default: oc.kind = OptimizerKind::adam; break;
  }
  // adaptive kinds get a smaller rate: their per-element step is the
  // gradient normalized by its own running scale, so sgd-sized rates would
  // make the finite-difference interval leave the locally linear regime
  oc.learning_rate = oc.kind == OptimizerKind::sgd ? rng.uniform(0.1, 0.8)
                                                   : rng.uniform(0.02, 0.2);
  if (index % 5 == 4) oc.clip_norm = rng.uniform(0.05, 0.5);
  d.opt = Optimizer(oc);
  // warm the accumulator statistics with two updates at the drawn z, as in
  // any real run; checking against cold statistics would divide the first
  // step by near-zero running scales and swamp the comparison with noise
  for (int w = 0; w < 2; ++w) {
    d.agent = inner_update(d.agent, d.meta, d.inner, d.cfg, d.opt).values_only();
  }
  return d;
}

MetaGradCheck check_meta_gradients(int draws, double epsilon, double tolerance,
                                   std::uint64_t base_seed) {
  MetaGradCheck out;
  out.draws = draws;
  for (int i = 0; i < draws; ++i) {
    const CheckDraw d = make_check_draw(base_seed, i);

    Optimizer mg_opt = d.opt;
    const MetaGradientResult mg =
        mg_meta_gradient(d.agent, d.meta, d.inner, d.outer, d.cfg, mg_opt);
    const double mg_fd =
        meta_gradient_fd_replay(d.agent, d.meta, d.inner, d.outer, d.cfg,
                                Algorithm::mg, d.spec, d.opt, epsilon);
    const double mg_rel = relative_error(mg.meta_gradient, mg_fd);
    out.worst_mg = std::max(out.worst_mg, mg_rel);

    Optimizer bmg_opt = d.opt;
    const MetaGradientResult bmg = bmg_meta_gradient(
        d.agent, d.meta, d.inner, d.outer, d.cfg, d.spec, bmg_opt);
    const double bmg_fd =
        meta_gradient_fd_replay(d.agent, d.meta, d.inner, d.outer, d.cfg,
                                Algorithm::bmg, d.spec, d.opt, epsilon);
    const double bmg_rel = relative_error(bmg.meta_gradient, bmg_fd);
    out.worst_bmg = std::max(out.worst_bmg, bmg_rel);

    if (mg_rel >= tolerance || bmg_rel >= tolerance) ++out.failures;
  }
  return out;
}

}  // namespace selftune
