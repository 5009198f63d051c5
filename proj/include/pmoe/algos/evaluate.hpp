#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "pmoe/algos/agent.hpp"
#include "pmoe/core/error.hpp"
#include "pmoe/envs/env.hpp"

namespace pmoe {

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
  std::vector<double> returns;
  std::vector<double> mean_weights;  // averaged over every visited state
  double routing_entropy = 0.0;
  std::size_t steps = 0;
};

// Episode i uses its own env seed, action stream and observation-noise stream,
// so runs at different sigma (or of different agents) share random numbers.
// The policy sees s + sigma * z with z ~ N(0, I).
inline EvalResult evaluate(const Agent& agent, const Env& env_template, std::size_t episodes, double obs_noise_sigma,
                           std::uint64_t seed, std::size_t max_episode_steps = 1000) {
  if (obs_noise_sigma < 0.0) throw ConfigError("observation noise sigma must be non-negative");
  if (episodes == 0) throw ConfigError("evaluate needs at least one episode");
  std::unique_ptr<Env> env = env_template.clone();
  const double bound = env->action_bound();
  EvalResult result;
  std::size_t successes = 0;
  double entropy_sum = 0.0;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Rng action_rng(mix_seed(seed, 3 * ep + 1));
    Rng noise_rng(mix_seed(seed, 3 * ep + 2));
    std::vector<double> obs = env->reset(mix_seed(seed, 3 * ep));
    double ret = 0.0;
    bool reached = false;
    for (std::size_t t = 0; t < max_episode_steps; ++t) {
      std::vector<double> seen = obs;
      for (double& x : seen) x += obs_noise_sigma * noise_rng.normal();
      const Action a = agent.act(seen, action_rng);
      if (!a.weights.empty()) {
        if (result.mean_weights.empty()) result.mean_weights.assign(a.weights.size(), 0.0);
        for (std::size_t i = 0; i < a.weights.size(); ++i) result.mean_weights[i] += a.weights[i];
        entropy_sum += routing_entropy(a.weights);
      }
      std::vector<double> env_action(a.action.size());
      for (std::size_t d = 0; d < env_action.size(); ++d) env_action[d] = std::clamp(a.action[d], -1.0, 1.0) * bound;
      const EnvStep step = env->step(env_action);
      ++result.steps;
      ret += step.reward;
      reached = reached || step.info.reached;
      obs = step.observation;
      if (step.done) break;
    }
    result.returns.push_back(ret);
    if (reached) ++successes;
  }
  const double n = static_cast<double>(episodes);
  for (double r : result.returns) result.mean_return += r;
  result.mean_return /= n;
  for (double r : result.returns) result.std_return += (r - result.mean_return) * (r - result.mean_return);
  result.std_return = std::sqrt(result.std_return / n);
  result.success_rate = static_cast<double>(successes) / n;
  if (!result.mean_weights.empty()) {
    for (double& w : result.mean_weights) w /= static_cast<double>(result.steps);
    result.routing_entropy = entropy_sum / static_cast<double>(result.steps);
  }
  return result;
}

}  // namespace pmoe
