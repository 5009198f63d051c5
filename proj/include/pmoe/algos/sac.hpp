#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "pmoe/algos/agent.hpp"
#include "pmoe/algos/config.hpp"
#include "pmoe/algos/evaluate.hpp"
#include "pmoe/algos/replay_buffer.hpp"
#include "pmoe/critic/critic.hpp"
#include "pmoe/diff/adam.hpp"
#include "pmoe/envs/env.hpp"
#include "pmoe/policy/mixture_policy.hpp"
#include "pmoe/primitive_update/primitive_update.hpp"
#include "pmoe/routers/routers.hpp"

namespace pmoe {

inline Tensor normal_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

inline void require_finite(double value, const char* what, std::size_t update) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string("non-finite ") + what + " loss at update " + std::to_string(update));
  }
}

inline std::string checkpoint_metadata(const TrainerConfig& config, std::size_t observation_dim, std::size_t action_dim) {
  KeyValues kv;
  config.to_key_values(kv);
  kv["observation_dim"] = std::to_string(observation_dim);
  kv["action_dim"] = std::to_string(action_dim);
  return format_key_values(kv);
}

class OffPolicyAgent : public Agent {
 public:
  virtual UpdateLosses update(const ReplayBatch& batch, Rng& rng) = 0;
  virtual std::size_t observation_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
};

// PMOE-SAC and the SAC-family baselines that share its mixture policy:
// freq routing (PMOE), gating composition, Gumbel-softmax and REINFORCE routers.
class MixtureSacAgent final : public OffPolicyAgent {
 public:
  MixtureSacAgent(TrainerConfig config, std::size_t observation_dim, std::size_t action_dim)
      : config_(std::move(config)), router_(router_of(config_.algorithm)) {
    config_.validate();
    Rng policy_rng = stream_rng(config_.seed, kPolicyInit);
    Rng critic_rng = stream_rng(config_.seed, kCriticInit);
    policy_ = MixturePolicy({observation_dim, action_dim, config_.k, config_.policy_hidden}, policy_rng);
    critic_ = TwinCritic({observation_dim, action_dim, config_.critic_hidden, config_.tau}, critic_rng);
    opt_routing_.learning_rate = config_.lr_routing;
    opt_primitive_.learning_rate = config_.lr_primitive;
    opt_critic_.learning_rate = config_.lr_critic;
  }

  const TrainerConfig& config() const override { return config_; }
  std::size_t observation_dim() const override { return policy_.observation_dim(); }
  std::size_t action_dim() const override { return policy_.action_dim(); }
  MixturePolicy& policy() { return policy_; }
  const MixturePolicy& policy() const { return policy_; }
  TwinCritic& critic() { return critic_; }

  MixtureOutput mixture(std::span<const double> observation) const override {
    return mixture_forward(policy_, observation);
  }

  Action act(std::span<const double> observation, Rng& rng) const override {
    return draw(mixture(observation), rng);
  }

  Checkpoint checkpoint() const override {
    Checkpoint c;
    c.metadata = checkpoint_metadata(config_, observation_dim(), action_dim());
    auto& self = const_cast<MixtureSacAgent&>(*this);
    c.add(self.policy_.parameters());
    c.add(self.critic_.parameters());
    return c;
  }

  void restore(const Checkpoint& ckpt) override {
    ckpt.restore(policy_.parameters());
    ckpt.restore(critic_.parameters());
  }

  UpdateLosses update(const ReplayBatch& batch, Rng& rng) override {
    ++updates_;
    const std::size_t rows = batch.states.rows();
    const std::size_t dims = action_dim();
    const std::size_t k = config_.k;

    // Bellman targets with a' freshly drawn from the current policy at s'.
    Tensor next_actions(Shape{rows, dims});
    Tensor next_log_prob(Shape{rows, 1});
    {
      Tape tape;
      const MixtureBatch next = policy_.forward(policy_.bind_frozen(tape), tape.constant(batch.next_states));
      for (std::size_t r = 0; r < rows; ++r) {
        const Action a = draw(next.at(r), rng);
        std::copy(a.action.begin(), a.action.end(), next_actions.row(r).begin());
        next_log_prob[r] = a.log_prob;
      }
    }
    const Tensor next_q = critic_.target_min(batch.next_states, next_actions);
    const Tensor targets =
        bellman_target(batch.rewards, batch.dones, next_q, next_log_prob, config_.gamma, config_.alpha);

    UpdateLosses losses;
    std::vector<Tensor> routing_grads, primitive_grads, critic_grads;

    // Routing and primitive losses, against the current (frozen) critic.
    {
      Tape tape;
      const MixturePolicy::Bound pb = policy_.bind(tape);
      const TwinCritic::Bound cb = critic_.bind_frozen(tape);
      const Var states = tape.constant(batch.states);
      const MixtureBatch mb = policy_.forward(pb, states);
      Var total;
      switch (router_) {
        case RouterKind::freq: {
          const PrimitiveActions pa = reparameterized_actions(mb, normal_tensor(rows, k * dims, rng), true);
          std::vector<Var> qs;
          for (std::size_t i = 0; i < k; ++i) qs.push_back(critic_.q_min(cb, states, slice_cols(pa.actions, i * dims, dims)));
          const PrimitiveLossReport pri = primitive_loss({config_.mode, config_.alpha, concat_cols(qs), pa.log_probs});
          const RouterLossReport freq = freq_loss(mb.weights, compute_v_batch(pri.soft_values));
          losses.primitive = pri.loss.value().item();
          losses.freq = freq.loss.value().item();
          total = pri.loss + freq.loss;
          break;
        }
        case RouterKind::gating: {
          const GatedGaussian g = gating_gaussian(mb);
          const Var eps = tape.constant(normal_tensor(rows, dims, rng));
          const Var raw = g.mean + g.std * eps;
          const Var log_prob =
              sum_rows(scale(square(eps), -0.5) - g.log_std - kHalfLog2Pi - tanh_log_jacobian(raw));
          const Var q = critic_.q_min(cb, states, tanh(raw));
          total = neg(mean(q - scale(log_prob, config_.alpha)));
          losses.primitive = total.value().item();
          break;
        }
        case RouterKind::gumbel: {
          const Var g = gumbel_router_sample(mb.logits, config_.gumbel_temperature, rng);
          const PrimitiveActions pa = reparameterized_actions(mb, normal_tensor(rows, k * dims, rng), true);
          const Var action = sum_across_blocks(repeat_blocks(g, dims) * pa.actions, dims);
          const Var log_prob = sum_rows(g * pa.log_probs);
          const Var q = critic_.q_min(cb, states, action);
          total = neg(mean(q - scale(log_prob, config_.alpha)));
          losses.primitive = total.value().item();
          break;
        }
        case RouterKind::reinforce: {
          std::vector<std::size_t> component(rows, 0);
          Tensor mask(Shape{rows, k});
          for (std::size_t r = 0; r < rows; ++r) {
            if (k > 1) component[r] = rng.categorical(mb.weights.value().row(r));
            mask(r, component[r]) = 1.0;
          }
          const PrimitiveActions pa = reparameterized_actions(mb, normal_tensor(rows, k * dims, rng), true);
          const Var action = sum_across_blocks(repeat_blocks(tape.constant(mask), dims) * pa.actions, dims);
          const Var log_prob = gather_cols(pa.log_probs, component);
          const Var soft = critic_.q_min(cb, states, action) - scale(log_prob, config_.alpha);
          const Var pri = neg(mean(soft));
          const RouterLossReport router = reinforce_router_loss(mb.log_weights, component, baseline_subtracted(soft.value()));
          losses.primitive = pri.value().item();
          losses.freq = router.loss.value().item();
          total = pri + router.loss;
          break;
        }
      }
      require_finite(losses.primitive, "primitive", updates_);
      require_finite(losses.freq, "routing", updates_);
      const Gradients grads = tape.backward(total);
      routing_grads = MixturePolicy::routing_gradients(grads, pb);
      primitive_grads = MixturePolicy::primitive_gradients(grads, pb);
    }

    {
      Tape tape;
      const TwinCritic::Bound cb = critic_.bind(tape);
      const Var states = tape.constant(batch.states);
      const Var actions = tape.constant(batch.actions);
      const Var loss = critic_loss({critic_.q_a(cb, states, actions), critic_.q_b(cb, states, actions)}, targets);
      losses.critic = loss.value().item();
      require_finite(losses.critic, "critic", updates_);
      critic_grads = TwinCritic::gradients(tape.backward(loss), cb);
    }

    adam_step(policy_.routing_parameters(), routing_grads, opt_routing_);
    adam_step(policy_.primitive_parameters(), primitive_grads, opt_primitive_);
    adam_step(critic_.parameters(), critic_grads, opt_critic_);
    critic_.update_targets();
    return losses;
  }

 private:
  Action draw(const MixtureOutput& out, Rng& rng) const {
    Action a;
    a.weights = out.weights;
    if (router_ == RouterKind::gating) {
      std::vector<double> mean, stddev;
      a.raw = gating_compose(out, rng, &mean, &stddev);
      a.action.resize(a.raw.size());
      for (std::size_t d = 0; d < a.raw.size(); ++d) {
        a.action[d] = std::tanh(a.raw[d]);
        const double z = (a.raw[d] - mean[d]) / stddev[d];
        a.log_prob += -0.5 * z * z - std::log(stddev[d]) - kHalfLog2Pi - tanh_log_jacobian(a.raw[d]);
      }
      a.component = static_cast<std::size_t>(std::max_element(out.weights.begin(), out.weights.end()) - out.weights.begin());
      return a;
    }
    SampledAction s = sample(out, rng, true);
    a.action = std::move(s.action);
    a.raw = std::move(s.raw);
    a.component = s.component;
    a.log_prob = s.log_prob_mixture;
    return a;
  }

  TrainerConfig config_;
  RouterKind router_;
  MixturePolicy policy_;
  TwinCritic critic_;
  AdamState opt_routing_, opt_primitive_, opt_critic_;
  std::size_t updates_ = 0;
};

// Plain unimodal SAC with its own actor code; the reference for the K = 1 reduction.
class GaussianSacAgent final : public OffPolicyAgent {
 public:
  GaussianSacAgent(TrainerConfig config, std::size_t observation_dim, std::size_t action_dim) : config_(std::move(config)) {
    if (config_.k != 1) throw ConfigError("unimodal SAC has exactly one Gaussian (k = 1)");
    config_.validate();
    Rng policy_rng = stream_rng(config_.seed, kPolicyInit);
    Rng critic_rng = stream_rng(config_.seed, kCriticInit);
    std::vector<std::size_t> sizes{observation_dim};
    sizes.insert(sizes.end(), config_.policy_hidden.begin(), config_.policy_hidden.end());
    trunk_ = Mlp("trunk", sizes, std::vector<Activation>(sizes.size() - 1, Activation::relu), policy_rng);
    mean_ = Mlp("mean", {sizes.back(), action_dim}, {Activation::identity}, policy_rng);
    log_std_ = Mlp("log_std", {sizes.back(), action_dim}, {Activation::identity}, policy_rng);
    critic_ = TwinCritic({observation_dim, action_dim, config_.critic_hidden, config_.tau}, critic_rng);
    obs_dim_ = observation_dim;
    act_dim_ = action_dim;
    opt_actor_.learning_rate = config_.lr_primitive;
    opt_critic_.learning_rate = config_.lr_critic;
  }

  const TrainerConfig& config() const override { return config_; }
  std::size_t observation_dim() const override { return obs_dim_; }
  std::size_t action_dim() const override { return act_dim_; }

  MixtureOutput mixture(std::span<const double> observation) const override {
    Tape tape;
    const Heads h = heads(bind_frozen(tape), tape.constant(as_row(observation)));
    MixtureOutput out;
    out.weights = {1.0};
    out.mean = Tensor(Shape{1, act_dim_}, h.mean.value().storage());
    out.std = Tensor(Shape{1, act_dim_}, h.std.value().storage());
    return out;
  }

  Action act(std::span<const double> observation, Rng& rng) const override {
    const MixtureOutput out = mixture(observation);
    return draw(out.mean.row(0), out.std.row(0), rng);
  }

  Checkpoint checkpoint() const override {
    Checkpoint c;
    c.metadata = checkpoint_metadata(config_, obs_dim_, act_dim_);
    auto& self = const_cast<GaussianSacAgent&>(*this);
    c.add(self.actor_parameters());
    c.add(self.critic_.parameters());
    return c;
  }

  void restore(const Checkpoint& ckpt) override {
    ckpt.restore(actor_parameters());
    ckpt.restore(critic_.parameters());
  }

  UpdateLosses update(const ReplayBatch& batch, Rng& rng) override {
    ++updates_;
    const std::size_t rows = batch.states.rows();

    Tensor next_actions(Shape{rows, act_dim_});
    Tensor next_log_prob(Shape{rows, 1});
    {
      Tape tape;
      const Heads h = heads(bind_frozen(tape), tape.constant(batch.next_states));
      for (std::size_t r = 0; r < rows; ++r) {
        const Action a = draw(h.mean.value().row(r), h.std.value().row(r), rng);
        std::copy(a.action.begin(), a.action.end(), next_actions.row(r).begin());
        next_log_prob[r] = a.log_prob;
      }
    }
    const Tensor targets = bellman_target(batch.rewards, batch.dones, critic_.target_min(batch.next_states, next_actions),
                                          next_log_prob, config_.gamma, config_.alpha);

    UpdateLosses losses;
    std::vector<Tensor> actor_grads, critic_grads;
    {
      Tape tape;
      const Bound b = bind(tape);
      const TwinCritic::Bound cb = critic_.bind_frozen(tape);
      const Var states = tape.constant(batch.states);
      const Heads h = heads(b, states);
      const Var eps = tape.constant(normal_tensor(rows, act_dim_, rng));
      const Var raw = h.mean + h.std * eps;
      const Var action = tanh(raw);
      Var per_dim = scale(square(eps), -0.5) - h.log_std - kHalfLog2Pi;
      per_dim = per_dim - tanh_log_jacobian(raw);
      const Var log_prob = sum_rows(per_dim);
      const Var loss = neg(mean(critic_.q_min(cb, states, action) - scale(log_prob, config_.alpha)));
      losses.primitive = loss.value().item();
      require_finite(losses.primitive, "actor", updates_);
      const Gradients grads = tape.backward(loss);
      actor_grads = Mlp::gradients(grads, b.trunk);
      for (auto& t : Mlp::gradients(grads, b.mean)) actor_grads.push_back(std::move(t));
      for (auto& t : Mlp::gradients(grads, b.log_std)) actor_grads.push_back(std::move(t));
    }
    {
      Tape tape;
      const TwinCritic::Bound cb = critic_.bind(tape);
      const Var states = tape.constant(batch.states);
      const Var actions = tape.constant(batch.actions);
      const Var loss = critic_loss({critic_.q_a(cb, states, actions), critic_.q_b(cb, states, actions)}, targets);
      losses.critic = loss.value().item();
      require_finite(losses.critic, "critic", updates_);
      critic_grads = TwinCritic::gradients(tape.backward(loss), cb);
    }
    adam_step(actor_parameters(), actor_grads, opt_actor_);
    adam_step(critic_.parameters(), critic_grads, opt_critic_);
    critic_.update_targets();
    return losses;
  }

 private:
  struct Bound {
    BoundMlp trunk, mean, log_std;
  };
  struct Heads {
    Var mean, log_std, std;
  };

  Bound bind(Tape& tape) const { return {trunk_.bind(tape), mean_.bind(tape), log_std_.bind(tape)}; }
  Bound bind_frozen(Tape& tape) const {
    return {trunk_.bind_frozen(tape), mean_.bind_frozen(tape), log_std_.bind_frozen(tape)};
  }

  Heads heads(const Bound& b, Var states) const {
    const Var features = trunk_.forward(b.trunk, states);
    Heads h;
    h.mean = mean_.forward(b.mean, features);
    h.log_std = clamp(log_std_.forward(b.log_std, features), -20.0, 2.0);
    h.std = exp(h.log_std);
    return h;
  }

  static Action draw(std::span<const double> mean, std::span<const double> stddev, Rng& rng) {
    Action a;
    a.weights = {1.0};
    a.raw.resize(mean.size());
    a.action.resize(mean.size());
    double gauss = 0.0, correction = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) {
      a.raw[d] = mean[d] + stddev[d] * rng.normal();
      a.action[d] = std::tanh(a.raw[d]);
      const double z = (a.raw[d] - mean[d]) / stddev[d];
      gauss += -0.5 * z * z - std::log(stddev[d]) - kHalfLog2Pi;
    }
    for (std::size_t d = 0; d < mean.size(); ++d) correction += tanh_log_jacobian(a.raw[d]);
    a.log_prob = gauss - correction;
    return a;
  }

  std::vector<ParamRef> actor_parameters() {
    std::vector<ParamRef> refs = trunk_.parameters();
    for (auto& r : mean_.parameters()) refs.push_back(r);
    for (auto& r : log_std_.parameters()) refs.push_back(r);
    return refs;
  }

  TrainerConfig config_;
  Mlp trunk_, mean_, log_std_;
  TwinCritic critic_;
  std::size_t obs_dim_ = 0, act_dim_ = 0;
  AdamState opt_actor_, opt_critic_;
  std::size_t updates_ = 0;
};

// ---- training loop ------------------------------------------------------------

struct TrainResult {
  std::unique_ptr<Agent> agent;
  std::vector<MetricRecord> records;
  std::size_t updates = 0;
  std::size_t episodes = 0;
};

namespace detail {

struct RecordAccumulator {
  double return_sum = 0.0;
  std::size_t returns = 0;
  double freq = 0.0, primitive = 0.0, critic = 0.0;
  std::size_t losses = 0;

  void add_losses(const UpdateLosses& l) {
    freq += l.freq;
    primitive += l.primitive;
    critic += l.critic;
    ++losses;
  }

  // Fills the training-side fields and resets.
  void drain(MetricRecord& rec) {
    if (returns) rec.episode_return = return_sum / static_cast<double>(returns);
    if (losses) {
      const double n = static_cast<double>(losses);
      rec.loss_freq = freq / n;
      rec.loss_primitive = primitive / n;
      rec.loss_critic = critic / n;
    }
    *this = {};
  }
};

inline void fill_eval(MetricRecord& rec, const Agent& agent, const Env& env, const TrainerConfig& cfg) {
  if (cfg.eval_episodes == 0) return;
  const EvalResult ev = evaluate(agent, env, cfg.eval_episodes, 0.0, mix_seed(cfg.seed, kEvaluation), cfg.episode_length);
  rec.eval_return = ev.mean_return;
  rec.eval_return_std = ev.std_return;
  rec.success_rate = ev.success_rate;
  rec.routing_entropy = ev.routing_entropy;
  rec.weights = ev.mean_weights;
}

inline std::vector<double> env_scale(std::span<const double> normalized, double bound) {
  std::vector<double> out(normalized.size());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = std::clamp(normalized[d], -1.0, 1.0) * bound;
  return out;
}

inline EnvStep checked_step(Env& env, std::span<const double> action, std::size_t step) {
  try {
    return env.step(action);
  } catch (const std::exception& e) {
    throw TrainingError("environment failure at step " + std::to_string(step) + ": " + e.what());
  }
}

}  // namespace detail

// Each iteration takes one environment step, then (after warmup, every
// update_every steps) runs update_every update steps.
inline TrainResult run_off_policy(std::unique_ptr<OffPolicyAgent> agent_ptr, Env& env, const TrainerCallbacks& callbacks) {
  OffPolicyAgent& agent = *agent_ptr;
  const TrainerConfig& cfg = agent.config();
  if (env.observation_dim() != agent.observation_dim() || env.action_dim() != agent.action_dim()) {
    throw ConfigError("agent and environment dimensions differ");
  }
  Rng act_rng = stream_rng(cfg.seed, kActing);
  Rng update_rng = stream_rng(cfg.seed, kUpdates);
  const std::unique_ptr<Env> eval_env = env.clone();
  ReplayBuffer buffer(cfg.replay_capacity, env.observation_dim(), env.action_dim());
  const double bound = env.action_bound();

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
  if (cfg.eval_every) record(0);

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    Action a;
    long component = -1;
    if (step <= cfg.warmup_steps) {
      a.action.resize(env.action_dim());
      for (double& x : a.action) x = act_rng.uniform(-1.0, 1.0);
    } else {
      a = agent.act(obs, act_rng);
      component = static_cast<long>(a.component);
    }
    const std::vector<double> env_action = detail::env_scale(a.action, bound);
    EnvStep res = detail::checked_step(env, env_action, step);
    ++episode_step;
    episode_return += res.reward;
    buffer.add(obs, a.action, res.reward, res.observation, res.done && !res.truncated);
    if (callbacks.on_env_step) {
      callbacks.on_env_step({step, result.episodes, episode_step, env.trace_state(), env_action, res.reward, component});
    }
    obs = std::move(res.observation);
    if (res.done || episode_step >= cfg.episode_length) {
      ++result.episodes;
      acc.return_sum += episode_return;
      ++acc.returns;
      episode_step = 0;
      episode_return = 0.0;
      obs = env.reset();
    }

    if (step > cfg.warmup_steps && buffer.size() >= cfg.batch_size && step % cfg.update_every == 0) {
      for (std::size_t j = 0; j < cfg.update_every; ++j) {
        const ReplayBatch batch = buffer.sample(cfg.batch_size, update_rng);
        const UpdateLosses losses = agent.update(batch, update_rng);
        ++result.updates;
        acc.add_losses(losses);
        if (callbacks.on_update) callbacks.on_update({result.updates, step, losses});
      }
    }
    if (cfg.eval_every && step % cfg.eval_every == 0) record(step);
    if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(step, agent);
    }
  }
  if (cfg.eval_every && cfg.total_steps % cfg.eval_every != 0) record(cfg.total_steps);
  result.agent = std::move(agent_ptr);
  return result;
}

inline std::unique_ptr<OffPolicyAgent> make_off_policy_agent(const TrainerConfig& config, std::size_t observation_dim,
                                                             std::size_t action_dim) {
  if (is_ppo(config.algorithm)) throw ConfigError("make_off_policy_agent: PPO is on-policy");
  if (config.algorithm == Algorithm::sac) return std::make_unique<GaussianSacAgent>(config, observation_dim, action_dim);
  return std::make_unique<MixtureSacAgent>(config, observation_dim, action_dim);
}

inline TrainResult train_sac(const TrainerConfig& config, Env& env, const TrainerCallbacks& callbacks = {}) {
  return run_off_policy(make_off_policy_agent(config, env.observation_dim(), env.action_dim()), env, callbacks);
}

}  // namespace pmoe
