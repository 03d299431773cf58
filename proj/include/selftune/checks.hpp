#ifndef SELFTUNE_CHECKS_HPP
#define SELFTUNE_CHECKS_HPP

#include <cstdint>

#include "selftune/envs.hpp"
#include "selftune/meta.hpp"
#include "selftune/network.hpp"

namespace selftune {

// One random discounting-chain cell for the finite-difference validator:
// bent linear parameters, a random logit, frozen batches, and a fresh SGD
// state, alternating the biased and fixed outer value sources and cycling
// the bootstrap depth.  Everything downstream of (base_seed, index) is
// deterministic, so a reported draw can be replayed exactly.
struct CheckDraw {
  AgentParams agent;
  MetaParams meta;
  TrajectoryBatch inner;
  TrajectoryBatch outer;
  MetaLossConfig cfg;
  BmgSpec spec;
  Optimizer opt;
};

CheckDraw make_check_draw(std::uint64_t base_seed, int index);

// Both analytic meta-gradients on `draws` random cells, each replayed
// against central finite differences over the logit.  `epsilon` is the FD
// step; a draw fails when either relative error reaches `tolerance`.
struct MetaGradCheck {
  int draws = 0;
  int failures = 0;
  double worst_mg = 0.0;   // largest relative error seen, mg engine
  double worst_bmg = 0.0;  // largest relative error seen, bmg engine
};

MetaGradCheck check_meta_gradients(int draws, double epsilon, double tolerance,
                                   std::uint64_t base_seed);

}  // namespace selftune

#endif
