#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pmoe/algos/config.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/checkpoint.hpp"
#include "pmoe/policy/mixture_policy.hpp"

namespace pmoe {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Action in the normalized box [-1, 1]^A (before scaling by the env bound).
struct Action {
  std::vector<double> action;
  std::vector<double> raw;
  std::size_t component = 0;
  double log_prob = 0.0;
  std::vector<double> weights;  // routing weights at the acting state; empty for non-mixture agents
};

// A trained policy as far as evaluation is concerned.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual Action act(std::span<const double> observation, Rng& rng) const = 0;
  // Per-state mixture (weights, per-primitive means/stds) for analysis exports.
  virtual MixtureOutput mixture(std::span<const double> observation) const = 0;
  virtual Checkpoint checkpoint() const = 0;
  virtual void restore(const Checkpoint& ckpt) = 0;
  virtual const TrainerConfig& config() const = 0;
};

struct UpdateLosses {
  double freq = 0.0;
  double primitive = 0.0;
  double critic = 0.0;
};

struct UpdateEvent {
  std::size_t update = 0;  // 1-based update index
  std::size_t step = 0;    // env steps taken when this update ran
  UpdateLosses losses;
};

struct EnvStepEvent {
  std::size_t step = 0;  // 1-based env step
  std::size_t episode = 0;
  std::size_t episode_step = 0;
  std::vector<double> trace;  // env trace_state() after the step
  std::vector<double> action;  // env-scale action
  double reward = 0.0;
  long component = -1;  // -1 for random warmup actions
};

struct MetricRecord {
  std::size_t step = 0;
  std::size_t updates = 0;
  std::size_t episodes = 0;
  double episode_return = kMissing;  // mean of training episodes finished since the previous record
  double eval_return = kMissing;
  double eval_return_std = kMissing;
  double success_rate = kMissing;
  double loss_freq = kMissing;
  double loss_primitive = kMissing;
  double loss_critic = kMissing;
  double routing_entropy = kMissing;
  std::vector<double> weights;  // routing weights averaged over eval states
};

struct TrainerCallbacks {
  std::function<void(const EnvStepEvent&)> on_env_step;
  std::function<void(const UpdateEvent&)> on_update;
  std::function<void(const MetricRecord&)> on_record;
  std::function<void(std::size_t step, const Agent&)> on_checkpoint;
};

// Separate seeded streams so that, e.g., adding a routing head does not shift
// the critic initialization.
enum Stream : std::uint64_t {
  kPolicyInit = 1,
  kCriticInit = 2,
  kActing = 3,
  kUpdates = 4,
  kEnvironment = 5,
  kEvaluation = 6,
};

inline Rng stream_rng(std::uint64_t seed, Stream s) { return Rng(mix_seed(seed, s)); }

inline double routing_entropy(std::span<const double> w) {
  double h = 0.0;
  for (double p : w) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace pmoe
