#ifndef SELFTUNE_ENVS_HPP
#define SELFTUNE_ENVS_HPP

#include <array>
#include <deque>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "selftune/rng.hpp"
#include "selftune/tensor.hpp"

namespace selftune {

struct StepResult {
  Tensor obs;
  double reward = 0.0;
  bool terminal = false;
};

// Delayed-reward credit-assignment chain.  The first action selects one of
// five chains; chain i pays its single reward on the transition with
// 0-based index horizon_i - 1, and the episode always lasts 100 steps.
// The long chain pays 1.1, so only a far-sighted discount prefers it.
class DiscountingChain {
 public:
  static constexpr int kChains = 5;
  static constexpr int kEpisodeLen = 100;
  static constexpr int kObsDim = kChains + 2;  // one-hot, none flag, t/len
  static constexpr std::array<int, kChains> kHorizons{1, 3, 10, 30, 100};
  static constexpr std::array<double, kChains> kRewards{1.0, 1.0, 1.0, 1.0, 1.1};

  int action_count() const { return kChains; }
  std::vector<int> obs_shape() const { return {kObsDim}; }

  Tensor reset(Rng& rng);
  StepResult step(int action, Rng& rng);

  int selected() const { return selected_; }  // -1 before the first action
  int timestep() const { return timestep_; }
  Tensor observation() const;

  // Exact V^{pi,gamma}(state).  `selected` is -1 at the pre-selection state,
  // where the value averages over the five selection probabilities; after
  // selection the probabilities are ignored.
  static DualScalar analytic_value(int selected, int timestep, DualScalar gamma,
                                   const DualScalar* selection_probs);
  static DualScalar analytic_value(int selected, int timestep, DualScalar gamma,
                                   const double* selection_probs);
  static double analytic_value(int selected, int timestep, double gamma,
                               const double* selection_probs);

  // Recover (selected, timestep) from an observation row.
  static void decode_obs(const double* obs_row, int& selected, int& timestep);

 private:
  int selected_ = -1;
  int timestep_ = 0;
};

// Classic snake on a 6x6 grid.  +1 per apple, nothing else; running into a
// wall or the body ends the episode with reward 0, as does the time limit.
// Cells are indexed row * 6 + col; the body is head-first.
class Snake {
 public:
  static constexpr int kSize = 6;
  static constexpr int kCells = kSize * kSize;
  static constexpr int kChannels = 4;  // head, body, tail, apple

  explicit Snake(int time_limit = 500) : time_limit_(time_limit) {}

  int action_count() const { return 4; }  // up, down, left, right
  std::vector<int> obs_shape() const { return {kChannels, kSize, kSize}; }

  Tensor reset(Rng& rng);
  StepResult step(int action, Rng& rng);

  const std::deque<int>& body() const { return body_; }
  int apple() const { return apple_; }
  bool alive() const { return alive_; }
  int timestep() const { return timestep_; }
  int apples_eaten() const { return apples_eaten_; }
  Tensor observation() const;

 private:
  int free_cell(Rng& rng) const;  // uniform over cells not covered by body

  int time_limit_;
  std::deque<int> body_;
  int apple_ = -1;
  int timestep_ = 0;
  int apples_eaten_ = 0;
  bool alive_ = false;
};

using EnvVariant = std::variant<DiscountingChain, Snake>;

// Construct an environment by its config identifier.
EnvVariant make_env(const std::string& env_id, int snake_time_limit = 500);

// Maps a stacked observation batch to action probabilities, one row per
// stream.
using PolicyFn = std::function<Tensor(const Tensor& obs_batch)>;

// Fixed-length slice of B parallel streams.  Rows are grouped by stream:
// index (b, t) lives at row b * steps + t.
struct TrajectoryBatch {
  int batch = 0;
  int steps = 0;
  Tensor obs;                         // [B*T, ...obs shape]
  Tensor bootstrap_obs;               // [B, ...obs shape], state after step T
  std::vector<int> actions;           // B*T
  Tensor rewards;                     // [B*T]
  std::vector<std::uint8_t> terminals;  // B*T, 1 where the step ended an episode
  Tensor behavior_log_probs;          // [B*T]
  std::vector<double> episode_returns;  // returns of episodes completed inside
                                        // this slice, in completion order

  std::size_t row(int b, int t) const {
    return static_cast<std::size_t>(b) * steps + t;
  }
};

// Advances B persistent environment streams and snapshots trajectories.
// Copying a Collector snapshots its full state: collecting from the copy
// and from the original with the same policy yields identical batches.
class Collector {
 public:
  Collector(const std::string& env_id, int batch, std::uint64_t seed,
            int snake_time_limit = 500);

  TrajectoryBatch collect(int steps, const PolicyFn& policy);

  int action_count() const;
  std::vector<int> obs_shape() const;
  int batch() const { return static_cast<int>(envs_.size()); }

 private:
  std::vector<EnvVariant> envs_;
  std::vector<Rng> rngs_;
  std::vector<Tensor> current_obs_;
  std::vector<double> running_return_;
};

}  // namespace selftune

#endif
