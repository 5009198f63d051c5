#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/envs/env.hpp"

namespace pmoe {

// Two equal optima at a = +2 and a = -2.
inline double bandit_reward(double a) { return std::max(std::exp(-(a - 2.0) * (a - 2.0)), std::exp(-(a + 2.0) * (a + 2.0))); }

// One-step episodes with a constant observation; actions are clipped to [-3, 3].
class Bandit final : public Env {
 public:
  static constexpr double kBound = 3.0;

  std::string name() const override { return "bandit"; }
  std::size_t observation_dim() const override { return 1; }
  std::size_t action_dim() const override { return 1; }
  double action_bound() const override { return kBound; }

  std::vector<double> reset(std::optional<std::uint64_t> = std::nullopt) override { return {1.0}; }

  EnvStep step(std::span<const double> action) override {
    if (action.size() != 1) throw UsageError("bandit expects a scalar action");
    EnvStep out;
    out.observation = {1.0};
    out.reward = bandit_reward(std::clamp(action[0], -kBound, kBound));
    out.done = true;
    return out;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<Bandit>(*this); }
};

}  // namespace pmoe
