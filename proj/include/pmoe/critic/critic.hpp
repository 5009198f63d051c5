#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/mlp.hpp"
#include "pmoe/diff/ops.hpp"

namespace pmoe {

struct CriticConfig {
  std::size_t observation_dim = 0;
  std::size_t action_dim = 0;
  std::vector<std::size_t> hidden{256, 256};
  double tau = 0.995;
};

inline Mlp make_q_network(const std::string& name, const CriticConfig& c, Rng& rng) {
  std::vector<std::size_t> sizes{c.observation_dim + c.action_dim};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  sizes.push_back(1);
  std::vector<Activation> acts(sizes.size() - 1, Activation::relu);
  acts.back() = Activation::identity;
  return Mlp(name, sizes, acts, rng);
}

// Twin Q-networks on concat(s, a) with Polyak-averaged target copies.
class TwinCritic {
 public:
  struct Bound {
    BoundMlp a, b;
  };

  TwinCritic() = default;
  TwinCritic(CriticConfig config, Rng& rng) : config_(std::move(config)) {
    if (!(config_.tau > 0.0 && config_.tau < 1.0)) throw ConfigError("polyak coefficient must lie in (0, 1)");
    q_a_ = make_q_network("q_a", config_, rng);
    q_b_ = make_q_network("q_b", config_, rng);
    target_a_ = q_a_;
    target_b_ = q_b_;
  }

  const CriticConfig& config() const { return config_; }
  double tau() const { return config_.tau; }

  Bound bind(Tape& tape) const { return {q_a_.bind(tape), q_b_.bind(tape)}; }
  Bound bind_frozen(Tape& tape) const { return {q_a_.bind_frozen(tape), q_b_.bind_frozen(tape)}; }

  Var q_a(const Bound& b, Var states, Var actions) const { return q_a_.forward(b.a, concat_cols({states, actions})); }
  Var q_b(const Bound& b, Var states, Var actions) const { return q_b_.forward(b.b, concat_cols({states, actions})); }
  Var q_min(const Bound& b, Var states, Var actions) const {
    const Var input = concat_cols({states, actions});
    return minimum(q_a_.forward(b.a, input), q_b_.forward(b.b, input));
  }

  // min(Q_target_A, Q_target_B)(s, a) as plain data: [B, 1].
  Tensor target_min(const Tensor& states, const Tensor& actions) const {
    Tape tape;
    const Var input = concat_cols({tape.constant(states), tape.constant(actions)});
    return minimum(target_a_.forward(target_a_.bind_frozen(tape), input),
                   target_b_.forward(target_b_.bind_frozen(tape), input))
        .value();
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> refs = q_a_.parameters();
    for (auto& r : q_b_.parameters()) refs.push_back(r);
    return refs;
  }
  std::vector<ParamRef> target_parameters() {
    std::vector<ParamRef> refs = target_a_.parameters();
    for (auto& r : target_b_.parameters()) refs.push_back(r);
    return refs;
  }
  static std::vector<Tensor> gradients(const Gradients& g, const Bound& b) {
    std::vector<Tensor> out = Mlp::gradients(g, b.a);
    for (auto& t : Mlp::gradients(g, b.b)) out.push_back(std::move(t));
    return out;
  }

  Mlp& online_a() { return q_a_; }
  Mlp& online_b() { return q_b_; }
  Mlp& target_a() { return target_a_; }
  Mlp& target_b() { return target_b_; }

  void update_targets();

 private:
  CriticConfig config_;
  Mlp q_a_, q_b_, target_a_, target_b_;
};

// target <- tau * target + (1 - tau) * online, elementwise.
inline void polyak_update(const Mlp& online, Mlp& target, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("polyak coefficient must lie in (0, 1)");
  auto& dst = target.layers();
  const auto& src = online.layers();
  if (dst.size() != src.size()) throw UsageError("polyak_update: network shapes differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].weight.shape() != src[i].weight.shape() || dst[i].bias.shape() != src[i].bias.shape()) {
      throw UsageError("polyak_update: layer shapes differ");
    }
    auto blend = [tau](Tensor& t, const Tensor& o) {
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = tau * t[j] + (1.0 - tau) * o[j];
    };
    blend(dst[i].weight, src[i].weight);
    blend(dst[i].bias, src[i].bias);
  }
}

inline void TwinCritic::update_targets() {
  polyak_update(q_a_, target_a_, config_.tau);
  polyak_update(q_b_, target_b_, config_.tau);
}

// y = r + gamma * (1 - done) * (next_q - alpha * next_log_prob); all inputs are data.
inline Tensor bellman_target(const Tensor& rewards, const Tensor& dones, const Tensor& next_q,
                             const Tensor& next_log_prob, double gamma, double alpha) {
  const std::size_t n = rewards.size();
  if (dones.size() != n || next_q.size() != n || next_log_prob.size() != n) {
    throw UsageError("bellman_target: batch lengths differ");
  }
  Tensor y(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rewards[i] + gamma * (1.0 - dones[i]) * (next_q[i] - alpha * next_log_prob[i]);
  }
  return y;
}

// Mean squared residual over every twin prediction against one shared target.
inline Var critic_loss(const std::vector<Var>& predictions, const Tensor& targets) {
  if (predictions.empty()) throw UsageError("critic_loss: no predictions");
  Tape& tape = predictions.front().tape();
  const Var y = tape.constant(targets);
  Var total = sum(square(predictions.front() - y));
  for (std::size_t i = 1; i < predictions.size(); ++i) total = total + sum(square(predictions[i] - y));
  return scale(total, 1.0 / static_cast<double>(targets.size() * predictions.size()));
}

}  // namespace pmoe
