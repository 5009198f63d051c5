#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/envs/env.hpp"

namespace pmoe {

struct TargetReachingConfig {
  std::size_t obstacles = 3;
  double dt = 0.1;
  std::size_t horizon = 200;
  double reach_radius = 0.3;
  double obstacle_radius = 0.3;
  double agent_radius = 0.1;
  bool fixed_layout = false;
  std::uint64_t layout_seed = 0;
};

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// 2-D point agent driven by accelerations in [-2, 2]^2 inside the [-5, 5]^2
// playground. Reward is 100 on reaching the target, -10 on hitting an edge or
// an obstacle (both end the episode), and the speed ||v||_2 otherwise.
class TargetReaching final : public Env {
 public:
  static constexpr double kHalfExtent = 5.0;
  static constexpr double kSpeedLimit = 2.0;
  static constexpr double kAccelLimit = 2.0;
  static constexpr Vec2 kSpawn{-4.5, -4.5};
  static constexpr double kReachReward = 100.0;
  static constexpr double kCollisionReward = -10.0;

  struct Layout {
    Vec2 target;
    std::vector<Vec2> obstacles;
  };

  explicit TargetReaching(TargetReachingConfig config = {}, std::uint64_t seed = 0)
      : config_(config), rng_(seed) {
    if (config_.horizon == 0) throw ConfigError("target-reaching horizon must be positive");
    if (config_.fixed_layout) {
      Rng layout_rng(config_.layout_seed);
      fixed_ = sample_layout(layout_rng);
    }
    layout_ = config_.fixed_layout ? *fixed_ : sample_layout(rng_);
    reset_state();
  }

  std::string name() const override { return "target-reaching"; }
  std::size_t observation_dim() const override { return 2 * config_.obstacles + 6; }
  std::size_t action_dim() const override { return 2; }
  double action_bound() const override { return kAccelLimit; }
  const TargetReachingConfig& config() const { return config_; }

  std::vector<double> reset(std::optional<std::uint64_t> seed = std::nullopt) override {
    if (seed) rng_ = Rng(*seed);
    layout_ = config_.fixed_layout ? *fixed_ : sample_layout(rng_);
    reset_state();
    return observation();
  }

  EnvStep step(std::span<const double> action) override {
    if (action.size() != 2) throw UsageError("target-reaching expects a 2-D acceleration");
    last_action_ = {std::clamp(action[0], -kAccelLimit, kAccelLimit), std::clamp(action[1], -kAccelLimit, kAccelLimit)};
    // Semi-implicit Euler with the speed limit applied per component.
    velocity_.x = std::clamp(velocity_.x + last_action_[0] * config_.dt, -kSpeedLimit, kSpeedLimit);
    velocity_.y = std::clamp(velocity_.y + last_action_[1] * config_.dt, -kSpeedLimit, kSpeedLimit);
    position_.x += velocity_.x * config_.dt;
    position_.y += velocity_.y * config_.dt;
    ++steps_;

    EnvStep out;
    const double limit = kHalfExtent - config_.agent_radius;
    if (distance(position_, layout_.target) <= config_.reach_radius) {
      out.reward = kReachReward;
      out.done = true;
      out.info.reached = true;
    } else if (std::abs(position_.x) > limit || std::abs(position_.y) > limit) {
      position_.x = std::clamp(position_.x, -limit, limit);
      position_.y = std::clamp(position_.y, -limit, limit);
      out.reward = kCollisionReward;
      out.done = true;
      out.info.collision = true;
    } else if (hits_obstacle()) {
      out.reward = kCollisionReward;
      out.done = true;
      out.info.collision = true;
    } else {
      out.reward = std::hypot(velocity_.x, velocity_.y);
    }
    if (!out.done && steps_ >= config_.horizon) {
      out.done = true;
      out.truncated = true;
    }
    out.observation = observation();
    return out;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<TargetReaching>(*this); }

  std::vector<double> trace_state() const override { return {position_.x, position_.y, velocity_.x, velocity_.y}; }

  const Layout& layout() const { return layout_; }
  Vec2 position() const { return position_; }
  Vec2 velocity() const { return velocity_; }
  std::size_t steps() const { return steps_; }

 private:
  Layout sample_layout(Rng& rng) const {
    Layout layout;
    layout.target = {rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)};
    const double limit = kHalfExtent - config_.obstacle_radius;
    for (std::size_t i = 0; i < config_.obstacles; ++i) {
      Vec2 p;
      // Truncated N(0, 3^2) by rejection; also keep clear of the spawn and the target disc.
      do {
        p = {rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)};
      } while (std::abs(p.x) > limit || std::abs(p.y) > limit ||
               distance(p, kSpawn) <= config_.obstacle_radius + config_.agent_radius + 0.1 ||
               distance(p, layout.target) <= config_.obstacle_radius + config_.reach_radius + 0.1);
      layout.obstacles.push_back(p);
    }
    return layout;
  }

  void reset_state() {
    position_ = kSpawn;
    velocity_ = {};
    last_action_ = {0.0, 0.0};
    steps_ = 0;
  }

  bool hits_obstacle() const {
    for (const Vec2& o : layout_.obstacles) {
      if (distance(position_, o) <= config_.obstacle_radius + config_.agent_radius) return true;
    }
    return false;
  }

  std::vector<double> observation() const {
    std::vector<double> obs;
    obs.reserve(observation_dim());
    obs.push_back(layout_.target.x - position_.x);
    obs.push_back(layout_.target.y - position_.y);
    for (const Vec2& o : layout_.obstacles) {
      obs.push_back(o.x - position_.x);
      obs.push_back(o.y - position_.y);
    }
    obs.push_back(last_action_[0]);
    obs.push_back(last_action_[1]);
    obs.push_back(velocity_.x);
    obs.push_back(velocity_.y);
    return obs;
  }

  TargetReachingConfig config_;
  Rng rng_;
  std::optional<Layout> fixed_;
  Layout layout_;
  Vec2 position_;
  Vec2 velocity_;
  std::array<double, 2> last_action_{};
  std::size_t steps_ = 0;
};

}  // namespace pmoe
