#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/tensor.hpp"

namespace pmoe {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // absorbing state reached; time-limit truncation is not done
};

struct ReplayBatch {
  Tensor states, actions, rewards, next_states, dones;  // rewards/dones are [n, 1]
  std::vector<std::size_t> indices;
};

// Ring buffer with flat storage that grows up to its capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t observation_dim, std::size_t action_dim)
      : capacity_(capacity), obs_dim_(observation_dim), act_dim_(action_dim) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }

  void add(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s2, bool done) {
    if (s.size() != obs_dim_ || s2.size() != obs_dim_ || a.size() != act_dim_) {
      throw UsageError("replay buffer: transition shape does not match the environment");
    }
    if (!std::isfinite(r)) throw TrainingError("replay buffer: non-finite reward");
    if (size_ < capacity_) {
      states_.insert(states_.end(), s.begin(), s.end());
      actions_.insert(actions_.end(), a.begin(), a.end());
      next_states_.insert(next_states_.end(), s2.begin(), s2.end());
      rewards_.push_back(r);
      dones_.push_back(done ? 1.0 : 0.0);
      ++size_;
    } else {
      std::copy(s.begin(), s.end(), states_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
      std::copy(a.begin(), a.end(), actions_.begin() + static_cast<std::ptrdiff_t>(cursor_ * act_dim_));
      std::copy(s2.begin(), s2.end(), next_states_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
      rewards_[cursor_] = r;
      dones_[cursor_] = done ? 1.0 : 0.0;
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  void add(const Transition& t) { add(t.state, t.action, t.reward, t.next_state, t.done); }

  Transition at(std::size_t i) const {
    if (i >= size_) throw UsageError("replay buffer: index out of range");
    Transition t;
    t.state.assign(states_.begin() + static_cast<std::ptrdiff_t>(i * obs_dim_),
                   states_.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_dim_));
    t.action.assign(actions_.begin() + static_cast<std::ptrdiff_t>(i * act_dim_),
                    actions_.begin() + static_cast<std::ptrdiff_t>((i + 1) * act_dim_));
    t.next_state.assign(next_states_.begin() + static_cast<std::ptrdiff_t>(i * obs_dim_),
                        next_states_.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_dim_));
    t.reward = rewards_[i];
    t.done = dones_[i] != 0.0;
    return t;
  }

  // Uniform with replacement over the stored items.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (size_ == 0) throw UsageError("replay buffer: cannot sample from an empty buffer");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.index(size_);
    return idx;
  }

  ReplayBatch gather(std::vector<std::size_t> idx) const {
    const std::size_t n = idx.size();
    ReplayBatch b;
    b.states = Tensor(Shape{n, obs_dim_});
    b.next_states = Tensor(Shape{n, obs_dim_});
    b.actions = Tensor(Shape{n, act_dim_});
    b.rewards = Tensor(Shape{n, 1});
    b.dones = Tensor(Shape{n, 1});
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = idx[r];
      for (std::size_t c = 0; c < obs_dim_; ++c) {
        b.states(r, c) = states_[i * obs_dim_ + c];
        b.next_states(r, c) = next_states_[i * obs_dim_ + c];
      }
      for (std::size_t c = 0; c < act_dim_; ++c) b.actions(r, c) = actions_[i * act_dim_ + c];
      b.rewards[r] = rewards_[i];
      b.dones[r] = dones_[i];
    }
    b.indices = std::move(idx);
    return b;
  }

  ReplayBatch sample(std::size_t n, Rng& rng) const { return gather(sample_indices(n, rng)); }

 private:
  std::size_t capacity_, obs_dim_, act_dim_;
  std::size_t size_ = 0, cursor_ = 0;
  std::vector<double> states_, actions_, next_states_, rewards_, dones_;
};

}  // namespace pmoe
