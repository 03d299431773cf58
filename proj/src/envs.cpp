#include "selftune/envs.hpp"

#include <algorithm>
#include <cmath>

#include "selftune/errors.hpp"

namespace selftune {

// ---- Discounting Chain ----------------------------------------------------

Tensor DiscountingChain::reset(Rng&) {
  selected_ = -1;
  timestep_ = 0;
  return observation();
}

Tensor DiscountingChain::observation() const {
  Tensor obs({kObsDim});
  if (selected_ >= 0) {
    obs[static_cast<std::size_t>(selected_)] = 1.0;
  } else {
    obs[kChains] = 1.0;  // "no selection yet" slot
  }
  obs[kChains + 1] = static_cast<double>(timestep_) / kEpisodeLen;
  return obs;
}

StepResult DiscountingChain::step(int action, Rng&) {
  if (timestep_ >= kEpisodeLen) {
    throw StateError("DiscountingChain::step: episode already finished");
  }
  if (action < 0 || action >= kChains) {
    throw ActionError("DiscountingChain::step: action " +
                      std::to_string(action) + " outside 0.." +
                      std::to_string(kChains - 1));
  }
  if (timestep_ == 0) selected_ = action;  // later actions are ignored
  ++timestep_;
  StepResult r;
  r.reward = (timestep_ == kHorizons[static_cast<std::size_t>(selected_)])
                 ? kRewards[static_cast<std::size_t>(selected_)]
                 : 0.0;
  r.terminal = timestep_ == kEpisodeLen;
  r.obs = observation();
  return r;
}

DualScalar DiscountingChain::analytic_value(int selected, int timestep,
                                            DualScalar gamma,
                                            const DualScalar* selection_probs) {
  if (!(gamma.v > 0.0) || gamma.v > 1.0) {
    throw ConfigError("analytic_value: gamma must lie in (0, 1], got " +
                      std::to_string(gamma.v));
  }
  if (selected < 0) {
    double total = 0.0;
    for (int i = 0; i < kChains; ++i) {
      if (!(selection_probs[i].v >= 0.0)) {
        throw DistributionError(
            "analytic_value: negative or NaN selection probability");
      }
      total += selection_probs[i].v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw DistributionError("analytic_value: selection probabilities sum to " +
                              std::to_string(total));
    }
    DualScalar v(0.0, 0.0);
    for (int i = 0; i < kChains; ++i) {
      v = v + selection_probs[i] * (pow_int(gamma, kHorizons[static_cast<std::size_t>(i)] - 1) *
                                    kRewards[static_cast<std::size_t>(i)]);
    }
    return v;
  }
  const int h = kHorizons[static_cast<std::size_t>(selected)];
  if (timestep >= h) return DualScalar(0.0, 0.0);  // reward already paid
  return pow_int(gamma, h - 1 - timestep) *
         kRewards[static_cast<std::size_t>(selected)];
}

DualScalar DiscountingChain::analytic_value(int selected, int timestep,
                                            DualScalar gamma,
                                            const double* selection_probs) {
  std::array<DualScalar, kChains> dual_probs;
  if (selected < 0) {
    for (int i = 0; i < kChains; ++i) {
      dual_probs[static_cast<std::size_t>(i)] =
          DualScalar::constant(selection_probs[i]);
    }
  }
  return analytic_value(selected, timestep, gamma, dual_probs.data());
}

double DiscountingChain::analytic_value(int selected, int timestep,
                                        double gamma,
                                        const double* selection_probs) {
  return analytic_value(selected, timestep, DualScalar::constant(gamma),
                        selection_probs)
      .v;
}

void DiscountingChain::decode_obs(const double* obs_row, int& selected,
                                  int& timestep) {
  selected = -1;
  for (int i = 0; i < kChains; ++i) {
    if (obs_row[i] > 0.5) {
      selected = i;
      break;
    }
  }
  timestep = static_cast<int>(std::lround(obs_row[kChains + 1] * kEpisodeLen));
}

// ---- Snake ----------------------------------------------------------------

int Snake::free_cell(Rng& rng) const {
  std::array<bool, kCells> covered{};
  for (int c : body_) covered[static_cast<std::size_t>(c)] = true;
  int free_count = 0;
  for (bool b : covered)
    if (!b) ++free_count;
  if (free_count == 0) return -1;
  int k = rng.below(free_count);
  for (int c = 0; c < kCells; ++c) {
    if (covered[static_cast<std::size_t>(c)]) continue;
    if (k-- == 0) return c;
  }
  return -1;  // unreachable
}

Tensor Snake::reset(Rng& rng) {
  body_.clear();
  body_.push_back(rng.below(kCells));
  apple_ = free_cell(rng);
  timestep_ = 0;
  apples_eaten_ = 0;
  alive_ = true;
  return observation();
}

Tensor Snake::observation() const {
  Tensor obs({kChannels, kSize, kSize});
  auto put = [&](int channel, int cell) {
    obs[static_cast<std::size_t>(channel) * kCells + cell] = 1.0;
  };
  put(0, body_.front());
  for (int c : body_) put(1, c);
  put(2, body_.back());
  if (apple_ >= 0) put(3, apple_);
  return obs;
}

StepResult Snake::step(int action, Rng& rng) {
  if (!alive_) {
    throw StateError("Snake::step: episode already finished");
  }
  if (action < 0 || action >= 4) {
    throw ActionError("Snake::step: action " + std::to_string(action) +
                      " outside 0..3");
  }
  static constexpr int kDRow[4] = {-1, 1, 0, 0};
  static constexpr int kDCol[4] = {0, 0, -1, 1};
  const int head = body_.front();
  const int row = head / kSize + kDRow[action];
  const int col = head % kSize + kDCol[action];
  ++timestep_;

  StepResult r;
  if (row < 0 || row >= kSize || col < 0 || col >= kSize) {
    alive_ = false;  // drove off the grid
    r.terminal = true;
    r.obs = observation();
    return r;
  }
  const int next = row * kSize + col;
  // The tail cell vacates on a non-growing move, so it does not count as a
  // collision; every other body cell does.
  if (next != body_.back() &&
      std::find(body_.begin(), body_.end(), next) != body_.end()) {
    alive_ = false;
    r.terminal = true;
    r.obs = observation();
    return r;
  }
  if (next == apple_) {
    body_.push_front(next);  // grow: tail stays put
    ++apples_eaten_;
    r.reward = 1.0;
    apple_ = free_cell(rng);
    if (apple_ < 0) {  // board full: the game is won
      alive_ = false;
      r.terminal = true;
      r.obs = observation();
      return r;
    }
  } else {
    body_.pop_back();
    body_.push_front(next);
  }
  if (timestep_ >= time_limit_) {
    alive_ = false;
    r.terminal = true;
  }
  r.obs = observation();
  return r;
}

// ---- factory & collector ---------------------------------------------------

EnvVariant make_env(const std::string& env_id, int snake_time_limit) {
  if (env_id == "discounting-chain") return DiscountingChain{};
  if (env_id == "snake-6x6") return Snake{snake_time_limit};
  throw ConfigError("make_env: unknown environment id '" + env_id + "'");
}

namespace {

int env_action_count(const EnvVariant& e) {
  return std::visit([](const auto& env) { return env.action_count(); }, e);
}

std::vector<int> env_obs_shape(const EnvVariant& e) {
  return std::visit([](const auto& env) { return env.obs_shape(); }, e);
}

Tensor env_reset(EnvVariant& e, Rng& rng) {
  return std::visit([&](auto& env) { return env.reset(rng); }, e);
}

StepResult env_step(EnvVariant& e, int action, Rng& rng) {
  return std::visit([&](auto& env) { return env.step(action, rng); }, e);
}

std::vector<int> prepend(int n, std::vector<int> shape) {
  shape.insert(shape.begin(), n);
  return shape;
}

}  // namespace

Collector::Collector(const std::string& env_id, int batch, std::uint64_t seed,
                     int snake_time_limit) {
  if (batch <= 0) {
    throw ConfigError("Collector: batch size must be positive");
  }
  envs_.reserve(static_cast<std::size_t>(batch));
  rngs_.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    envs_.push_back(make_env(env_id, snake_time_limit));
    rngs_.push_back(Rng::substream(seed, static_cast<std::uint64_t>(b)));
    current_obs_.push_back(env_reset(envs_.back(), rngs_.back()));
    running_return_.push_back(0.0);
  }
}

int Collector::action_count() const { return env_action_count(envs_.front()); }

std::vector<int> Collector::obs_shape() const {
  return env_obs_shape(envs_.front());
}

TrajectoryBatch Collector::collect(int steps, const PolicyFn& policy) {
  if (steps <= 0) {
    throw ConfigError("Collector::collect: steps must be positive");
  }
  const int B = batch();
  const int A = action_count();
  const std::vector<int> per_obs = obs_shape();
  std::size_t obs_vol = 1;
  for (int d : per_obs) obs_vol *= static_cast<std::size_t>(d);

  TrajectoryBatch out;
  out.batch = B;
  out.steps = steps;
  out.obs = Tensor(prepend(B * steps, per_obs));
  out.bootstrap_obs = Tensor(prepend(B, per_obs));
  out.actions.assign(static_cast<std::size_t>(B) * steps, 0);
  out.rewards = Tensor({B * steps});
  out.terminals.assign(static_cast<std::size_t>(B) * steps, 0);
  out.behavior_log_probs = Tensor({B * steps});

  Tensor stacked(prepend(B, per_obs));
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < B; ++b) {
      std::copy(current_obs_[static_cast<std::size_t>(b)].data(),
                current_obs_[static_cast<std::size_t>(b)].data() + obs_vol,
                stacked.data() + static_cast<std::size_t>(b) * obs_vol);
    }
    const Tensor probs = policy(stacked);
    if (probs.ndim() != 2 || probs.dim(0) != B || probs.dim(1) != A) {
      throw ShapeError("Collector::collect: policy returned shape " +
                       probs.shape_str() + ", expected [" + std::to_string(B) +
                       "," + std::to_string(A) + "]");
    }
    for (int b = 0; b < B; ++b) {
      const std::size_t r = out.row(b, t);
      std::copy(stacked.data() + static_cast<std::size_t>(b) * obs_vol,
                stacked.data() + static_cast<std::size_t>(b + 1) * obs_vol,
                out.obs.data() + r * obs_vol);
      Rng& rng = rngs_[static_cast<std::size_t>(b)];
      const int a =
          rng.categorical(probs.data() + static_cast<std::size_t>(b) * A, A);
      const double p = probs[static_cast<std::size_t>(b) * A + a];
      StepResult sr = env_step(envs_[static_cast<std::size_t>(b)], a, rng);
      out.actions[r] = a;
      out.rewards[r] = sr.reward;
      out.terminals[r] = sr.terminal ? 1 : 0;
      out.behavior_log_probs[r] = std::log(p);
      running_return_[static_cast<std::size_t>(b)] += sr.reward;
      if (sr.terminal) {
        out.episode_returns.push_back(running_return_[static_cast<std::size_t>(b)]);
        running_return_[static_cast<std::size_t>(b)] = 0.0;
        current_obs_[static_cast<std::size_t>(b)] =
            env_reset(envs_[static_cast<std::size_t>(b)], rng);
      } else {
        current_obs_[static_cast<std::size_t>(b)] = std::move(sr.obs);
      }
    }
  }
  for (int b = 0; b < B; ++b) {
    std::copy(current_obs_[static_cast<std::size_t>(b)].data(),
              current_obs_[static_cast<std::size_t>(b)].data() + obs_vol,
              out.bootstrap_obs.data() + static_cast<std::size_t>(b) * obs_vol);
  }
  return out;
}

}  // namespace selftune
