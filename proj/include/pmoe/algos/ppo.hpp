#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <vector>

#include "pmoe/algos/agent.hpp"
#include "pmoe/algos/config.hpp"
#include "pmoe/algos/sac.hpp"
#include "pmoe/critic/critic.hpp"
#include "pmoe/critic/gae.hpp"
#include "pmoe/diff/adam.hpp"
#include "pmoe/envs/env.hpp"
#include "pmoe/policy/mixture_policy.hpp"
#include "pmoe/routers/routers.hpp"

namespace pmoe {

struct SurrogateReport {
  Var loss;
  Tensor ratio;  // [B, 1]
  double clipped_fraction = 0.0;
};

// -mean(min(r * A, clip(r, 1 - eps, 1 + eps) * A)) with r = exp(log_prob - old_log_prob).
inline SurrogateReport ppo_surrogate(Var log_prob, const Tensor& old_log_prob, const Tensor& advantages, double clip_ratio) {
  if (log_prob.value().size() != old_log_prob.size() || old_log_prob.size() != advantages.size()) {
    throw UsageError("ppo_surrogate: batch lengths differ");
  }
  Tape& tape = log_prob.tape();
  const Shape column{old_log_prob.size(), 1};
  const Var old = tape.constant(Tensor(column, old_log_prob.storage()));
  const Var adv = tape.constant(Tensor(column, advantages.storage()));
  const Var ratio = exp(log_prob - old);
  const Var clipped = clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio);
  SurrogateReport report;
  report.loss = neg(mean(minimum(ratio * adv, clipped * adv)));
  report.ratio = ratio.value();
  std::size_t n = 0;
  for (double r : report.ratio.data()) n += (r < 1.0 - clip_ratio || r > 1.0 + clip_ratio) ? 1 : 0;
  report.clipped_fraction = static_cast<double>(n) / static_cast<double>(report.ratio.size());
  return report;
}

// The mixture as seen by the PPO surrogate: routing weights are data, and in
// row b only the primitive marked in `selected` (one-hot [B, K]) keeps its
// gradient path; the others enter through detached copies.
inline MixtureBatch masked_mixture(const MixtureBatch& mb, const Tensor& selected) {
  Tape& tape = mb.mean.tape();
  const Var m = repeat_blocks(tape.constant(selected), mb.action_dim);
  Tensor ones(m.shape(), 1.0);
  const Var keep_out = tape.constant(ones) - m;
  MixtureBatch out = mb;
  out.logits = detach(mb.logits);
  out.weights = detach(mb.weights);
  out.log_weights = detach(mb.log_weights);
  out.mean = m * mb.mean + keep_out * detach(mb.mean);
  out.log_std = m * mb.log_std + keep_out * detach(mb.log_std);
  out.std = exp(out.log_std);
  return out;
}

inline Mlp make_q_head(std::size_t observation_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> sizes{observation_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  std::vector<Activation> acts(sizes.size() - 1, Activation::tanh);
  acts.back() = Activation::identity;
  return Mlp("q_aux", sizes, acts, rng);
}

// PMOE-PPO. Unsquashed Gaussian primitives with tanh-bounded means; the
// environment receives the action clipped to the box.
class PpoAgent final : public Agent {
 public:
  PpoAgent(TrainerConfig config, std::size_t observation_dim, std::size_t action_dim) : config_(std::move(config)) {
    config_.validate();
    Rng policy_rng = stream_rng(config_.seed, kPolicyInit);
    Rng critic_rng = stream_rng(config_.seed, kCriticInit);
    policy_ = MixturePolicy({observation_dim, action_dim, config_.k, config_.policy_hidden, Activation::tanh}, policy_rng);
    value_ = make_value_head(observation_dim, config_.critic_hidden, critic_rng);
    q_aux_ = make_q_head(observation_dim, action_dim, config_.critic_hidden, critic_rng);
    opt_routing_.learning_rate = config_.lr_routing;
    opt_primitive_.learning_rate = config_.lr_primitive;
    opt_critic_.learning_rate = config_.lr_critic;
  }

  const TrainerConfig& config() const override { return config_; }
  std::size_t observation_dim() const { return policy_.observation_dim(); }
  std::size_t action_dim() const { return policy_.action_dim(); }
  MixturePolicy& policy() { return policy_; }
  Mlp& value_head() { return value_; }
  Mlp& q_head() { return q_aux_; }

  MixtureOutput mixture(std::span<const double> observation) const override {
    return mixture_forward(policy_, observation);
  }

  Action act(std::span<const double> observation, Rng& rng) const override {
    const MixtureOutput out = mixture(observation);
    SampledAction s = sample(out, rng, false);
    Action a;
    a.weights = out.weights;
    a.raw = std::move(s.raw);
    a.action = a.raw;
    for (double& x : a.action) x = std::clamp(x, -1.0, 1.0);
    a.component = s.component;
    a.log_prob = s.log_prob_mixture;
    return a;
  }

  Tensor values(const Tensor& states) const { return infer(value_, states); }

  Checkpoint checkpoint() const override {
    Checkpoint c;
    c.metadata = checkpoint_metadata(config_, observation_dim(), action_dim());
    auto& self = const_cast<PpoAgent&>(*this);
    c.add(self.policy_.parameters());
    c.add(self.value_.parameters());
    c.add(self.q_aux_.parameters());
    return c;
  }

  void restore(const Checkpoint& ckpt) override {
    ckpt.restore(policy_.parameters());
    ckpt.restore(value_.parameters());
    ckpt.restore(q_aux_.parameters());
  }

  // One minibatch step over rollout rows: surrogate on psi (bpm mask),
  // freq loss on theta with v from the auxiliary Q-head, and value/Q regression.
  UpdateLosses update(const Tensor& states, const Tensor& raw_actions, const Tensor& old_log_prob,
                      const Tensor& advantages, const Tensor& returns, Rng& rng) {
    ++updates_;
    const std::size_t rows = states.rows();
    const std::size_t dims = action_dim();
    const std::size_t k = config_.k;
    UpdateLosses losses;
    std::vector<Tensor> routing_grads, primitive_grads, critic_grads;
    {
      Tape tape;
      const MixturePolicy::Bound pb = policy_.bind(tape);
      const Var s = tape.constant(states);
      const MixtureBatch mb = policy_.forward(pb, s);

      // v: which primitive's own draw scores highest under the auxiliary Q-head.
      const Tensor noise = normal_tensor(rows, k * dims, rng);
      Tensor q_values(Shape{rows, k});
      for (std::size_t i = 0; i < k; ++i) {
        Tensor input(Shape{rows, observation_dim() + dims});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < observation_dim(); ++c) input(r, c) = states(r, c);
          for (std::size_t d = 0; d < dims; ++d) {
            const std::size_t col = i * dims + d;
            const double a = mb.mean.value()(r, col) + mb.std.value()(r, col) * noise(r, col);
            input(r, observation_dim() + d) = std::clamp(a, -1.0, 1.0);
          }
        }
        const Tensor q = infer(q_aux_, input);
        for (std::size_t r = 0; r < rows; ++r) q_values(r, i) = q[r];
      }
      const Tensor v = compute_v_batch(q_values);

      const Var log_prob = mixture_log_prob(masked_mixture(mb, v), raw_actions, false);
      const SurrogateReport surrogate = ppo_surrogate(log_prob, old_log_prob, advantages, config_.clip_ratio);
      const RouterLossReport freq = freq_loss(mb.weights, v);
      losses.primitive = surrogate.loss.value().item();
      losses.freq = freq.loss.value().item();
      require_finite(losses.primitive, "surrogate", updates_);
      require_finite(losses.freq, "routing", updates_);
      const Gradients grads = tape.backward(surrogate.loss + freq.loss);
      routing_grads = MixturePolicy::routing_gradients(grads, pb);
      primitive_grads = MixturePolicy::primitive_gradients(grads, pb);
    }
    {
      Tape tape;
      const BoundMlp vb = value_.bind(tape);
      const BoundMlp qb = q_aux_.bind(tape);
      const Var s = tape.constant(states);
      Tensor clipped = raw_actions;
      for (double& x : clipped.data()) x = std::clamp(x, -1.0, 1.0);
      const Var y = tape.constant(returns);
      const Var value_loss = mean(square(value_.forward(vb, s) - y));
      const Var q_loss = mean(square(q_aux_.forward(qb, concat_cols({s, tape.constant(clipped)})) - y));
      const Var loss = value_loss + q_loss;
      losses.critic = value_loss.value().item();
      require_finite(loss.value().item(), "value", updates_);
      const Gradients grads = tape.backward(loss);
      critic_grads = Mlp::gradients(grads, vb);
      for (auto& t : Mlp::gradients(grads, qb)) critic_grads.push_back(std::move(t));
    }
    adam_step(policy_.routing_parameters(), routing_grads, opt_routing_);
    adam_step(policy_.primitive_parameters(), primitive_grads, opt_primitive_);
    std::vector<ParamRef> critic_params = value_.parameters();
    for (auto& r : q_aux_.parameters()) critic_params.push_back(r);
    adam_step(critic_params, critic_grads, opt_critic_);
    return losses;
  }

 private:
  TrainerConfig config_;
  MixturePolicy policy_;
  Mlp value_, q_aux_;
  AdamState opt_routing_, opt_primitive_, opt_critic_;
  std::size_t updates_ = 0;
};

namespace detail {

inline Tensor select_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Tensor out(Shape{idx.size(), t.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = t.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace detail

// Collect episode_length on-policy steps, estimate GAE advantages, then run
// ppo_epochs passes of shuffled minibatches; repeat until the step budget.
inline TrainResult train_ppo(const TrainerConfig& config, Env& env, const TrainerCallbacks& callbacks = {}) {
  if (!is_ppo(config.algorithm)) throw ConfigError("train_ppo: algorithm must be pmoe-ppo");
  auto agent_ptr = std::make_unique<PpoAgent>(config, env.observation_dim(), env.action_dim());
  PpoAgent& agent = *agent_ptr;
  const TrainerConfig& cfg = agent.config();
  Rng act_rng = stream_rng(cfg.seed, kActing);
  Rng update_rng = stream_rng(cfg.seed, kUpdates);
  const std::unique_ptr<Env> eval_env = env.clone();
  const double bound = env.action_bound();
  const std::size_t obs_dim = env.observation_dim();
  const std::size_t dims = env.action_dim();
  // Rollouts of episode_length steps; no episode is allowed to run longer than
  // the rollout itself.
  const std::size_t horizon = cfg.episode_length;

  TrainResult result;
  detail::RecordAccumulator acc;
  auto record = [&](std::size_t step) {
    MetricRecord rec;
    rec.step = step;
    rec.updates = result.updates;
    rec.episodes = result.episodes;
    acc.drain(rec);
    detail::fill_eval(rec, agent, *eval_env, cfg);
    result.records.push_back(rec);
    if (callbacks.on_record) callbacks.on_record(rec);
  };

  std::vector<double> obs = env.reset(mix_seed(cfg.seed, kEnvironment));
  std::size_t episode_step = 0;
  double episode_return = 0.0;
  std::size_t step = 0;
  std::size_t next_eval = cfg.eval_every;
  std::size_t next_checkpoint = cfg.checkpoint_every;
  if (cfg.eval_every) record(0);

  while (step < cfg.total_steps) {
    const std::size_t n = std::min(horizon, cfg.total_steps - step);
    Tensor states(Shape{n, obs_dim}), next_states(Shape{n, obs_dim}), raw(Shape{n, dims}), old_log_prob(Shape{n, 1});
    RolloutSegment seg;
    for (std::size_t t = 0; t < n; ++t) {
      ++step;
      std::copy(obs.begin(), obs.end(), states.row(t).begin());
      const Action a = agent.act(obs, act_rng);
      std::copy(a.raw.begin(), a.raw.end(), raw.row(t).begin());
      old_log_prob[t] = a.log_prob;
      const std::vector<double> env_action = detail::env_scale(a.action, bound);
      EnvStep res = detail::checked_step(env, env_action, step);
      ++episode_step;
      episode_return += res.reward;
      std::copy(res.observation.begin(), res.observation.end(), next_states.row(t).begin());
      if (callbacks.on_env_step) {
        callbacks.on_env_step({step, result.episodes, episode_step, env.trace_state(), env_action, res.reward,
                               static_cast<long>(a.component)});
      }
      const bool end = res.done || episode_step >= cfg.episode_length;
      seg.rewards.push_back(res.reward);
      seg.terminal.push_back(res.done && !res.truncated);
      seg.episode_end.push_back(end);
      obs = std::move(res.observation);
      if (end) {
        ++result.episodes;
        acc.return_sum += episode_return;
        ++acc.returns;
        episode_step = 0;
        episode_return = 0.0;
        obs = env.reset();
      }
    }
    const Tensor v = agent.values(states);
    const Tensor v_next = agent.values(next_states);
    seg.values.assign(v.data().begin(), v.data().end());
    seg.next_values.assign(v_next.data().begin(), v_next.data().end());
    const AdvantageEstimate est = gae_advantages(seg, cfg.gamma, cfg.gae_lambda);
    const Tensor advantages(Shape{n, 1}, est.advantages);
    const Tensor returns(Shape{n, 1}, est.returns);

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), update_rng.engine());
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
        const UpdateLosses losses =
            agent.update(detail::select_rows(states, idx), detail::select_rows(raw, idx), detail::select_rows(old_log_prob, idx),
                         detail::select_rows(advantages, idx), detail::select_rows(returns, idx), update_rng);
        ++result.updates;
        acc.add_losses(losses);
        if (callbacks.on_update) callbacks.on_update({result.updates, step, losses});
      }
    }
    if (cfg.eval_every && step >= next_eval) {
      record(step);
      while (next_eval <= step) next_eval += cfg.eval_every;
    }
    if (cfg.checkpoint_every && step >= next_checkpoint) {
      if (callbacks.on_checkpoint) callbacks.on_checkpoint(step, agent);
      while (next_checkpoint <= step) next_checkpoint += cfg.checkpoint_every;
    }
  }
  if (cfg.eval_every && (result.records.empty() || result.records.back().step != step)) record(step);
  result.agent = std::move(agent_ptr);
  return result;
}

inline TrainResult train(const TrainerConfig& config, Env& env, const TrainerCallbacks& callbacks = {}) {
  return is_ppo(config.algorithm) ? train_ppo(config, env, callbacks) : train_sac(config, env, callbacks);
}

// Rebuilds an agent from a checkpoint written by Agent::checkpoint().
inline std::unique_ptr<Agent> load_agent(const Checkpoint& ckpt) {
  const KeyValues kv = parse_key_values(ckpt.metadata);
  TrainerConfig config;
  std::size_t obs_dim = 0, act_dim = 0;
  for (const auto& [key, value] : kv) {
    if (key == "observation_dim") obs_dim = parse_uint(key, value);
    else if (key == "action_dim") act_dim = parse_uint(key, value);
    else if (!config.apply(key, value)) throw ConfigError("checkpoint metadata: unknown key '" + key + "'");
  }
  std::unique_ptr<Agent> agent;
  if (is_ppo(config.algorithm)) agent = std::make_unique<PpoAgent>(config, obs_dim, act_dim);
  else agent = make_off_policy_agent(config, obs_dim, act_dim);
  agent->restore(ckpt);
  return agent;
}

}  // namespace pmoe
