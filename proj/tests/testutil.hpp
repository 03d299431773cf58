#ifndef SELFTUNE_TESTS_TESTUTIL_HPP
#define SELFTUNE_TESTS_TESTUTIL_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "selftune/envs.hpp"
#include "selftune/network.hpp"
#include "selftune/rng.hpp"
#include "selftune/tensor.hpp"

namespace testutil {

inline selftune::Tensor randn_like(const selftune::Tensor& t, selftune::Rng& rng,
                                   double scale = 1.0) {
  selftune::Tensor out(t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * rng.normal();
  return out;
}

inline double dot(const selftune::Tensor& a, const selftune::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One random direction per agent tensor.
inline std::vector<selftune::Tensor> random_directions(
    const selftune::AgentParams& agent, selftune::Rng& rng) {
  std::vector<selftune::Tensor> dirs;
  dirs.reserve(agent.tensors.size());
  for (const selftune::DualTensor& t : agent.tensors) {
    dirs.push_back(randn_like(t.value, rng));
  }
  return dirs;
}

// agent shifted by h along the given directions, tangent channels dropped.
inline selftune::AgentParams shifted(const selftune::AgentParams& agent,
                                     const std::vector<selftune::Tensor>& dirs,
                                     double h) {
  selftune::AgentParams out = agent.values_only();
  for (std::size_t k = 0; k < out.tensors.size(); ++k) {
    selftune::Tensor& v = out.tensors[k].value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += h * dirs[k][i];
  }
  return out;
}

// agent with tangent channels set to the given directions (theta(z) =
// theta + z * D at z = 0).
inline selftune::AgentParams with_tangents(
    const selftune::AgentParams& agent,
    const std::vector<selftune::Tensor>& dirs) {
  selftune::AgentParams out = agent.values_only();
  for (std::size_t k = 0; k < out.tensors.size(); ++k) {
    out.tensors[k].tangent = dirs[k];
  }
  return out;
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / denom;
}

// Uniform random policy over `actions`, the behavior policy the collector
// tests drive environments with.
inline selftune::PolicyFn uniform_policy(int actions) {
  return [actions](const selftune::Tensor& obs) {
    selftune::Tensor probs({obs.dim(0), actions}, 1.0 / actions);
    return probs;
  };
}

}  // namespace testutil

#endif
