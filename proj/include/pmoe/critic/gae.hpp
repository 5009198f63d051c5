#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/mlp.hpp"

namespace pmoe {

// PPO state-value network (64-64-1, tanh hidden).
inline Mlp make_value_head(std::size_t observation_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> sizes{observation_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  std::vector<Activation> acts(sizes.size() - 1, Activation::tanh);
  acts.back() = Activation::identity;
  return Mlp("value", sizes, acts, rng);
}

// One rollout segment. next_values[t] is V(s_{t+1}) of the true successor,
// used for bootstrapping at truncation; it is ignored where terminal[t].
struct RolloutSegment {
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> next_values;
  std::vector<bool> terminal;     // environment reached an absorbing state
  std::vector<bool> episode_end;  // terminal or truncated: the recursion restarts
};

struct AdvantageEstimate {
  std::vector<double> advantages;  // normalized to zero mean, unit variance
  std::vector<double> raw_advantages;
  std::vector<double> returns;  // raw_advantages + values
};

inline AdvantageEstimate gae_advantages(const RolloutSegment& seg, double gamma, double lambda) {
  const std::size_t n = seg.rewards.size();
  if (seg.values.size() != n || seg.next_values.size() != n || seg.terminal.size() != n ||
      seg.episode_end.size() != n) {
    throw UsageError("gae_advantages: rollout arrays have inconsistent lengths");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  AdvantageEstimate out;
  out.raw_advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double bootstrap = seg.terminal[t] ? 0.0 : seg.next_values[t];
    const double delta = seg.rewards[t] + gamma * bootstrap - seg.values[t];
    if (seg.episode_end[t]) running = 0.0;
    running = delta + gamma * lambda * running;
    out.raw_advantages[t] = running;
    out.returns[t] = running + seg.values[t];
  }
  out.advantages = out.raw_advantages;
  if (n > 1) {
    double mean = 0.0;
    for (double a : out.advantages) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double stddev = std::sqrt(var / static_cast<double>(n));
    for (double& a : out.advantages) a = (a - mean) / (stddev + 1e-8);
  }
  return out;
}

}  // namespace pmoe
