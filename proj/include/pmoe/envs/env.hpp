#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pmoe {

struct StepInfo {
  bool collision = false;
  bool reached = false;
};

struct EnvStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done because of the time limit, not an absorbing state
  StepInfo info;
};

// Continuous-control task with a box action space [-action_bound, action_bound]^action_dim.
class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual std::size_t observation_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual double action_bound() const = 0;

  // Reseeds the task's sampler when a seed is given, then starts a new episode.
  virtual std::vector<double> reset(std::optional<std::uint64_t> seed = std::nullopt) = 0;
  virtual EnvStep step(std::span<const double> action) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  // Physical state for trajectory export: {x, y, vx, vy}, or empty.
  virtual std::vector<double> trace_state() const { return {}; }
};

}  // namespace pmoe
