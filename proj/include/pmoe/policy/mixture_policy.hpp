#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/mlp.hpp"
#include "pmoe/diff/ops.hpp"

namespace pmoe {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)
inline constexpr double kLog2 = std::numbers::ln2;

// log(1 - tanh(u)^2), evaluated without cancellation for large |u|.
inline double tanh_log_jacobian(double u) { return 2.0 * (kLog2 - u - detail::softplus_value(-2.0 * u)); }

inline Var tanh_log_jacobian(Var u) { return scale(add_scalar(neg(u), kLog2) - softplus(scale(u, -2.0)), 2.0); }

struct MixturePolicyConfig {
  std::size_t observation_dim = 0;
  std::size_t action_dim = 0;
  std::size_t k = 4;
  std::vector<std::size_t> hidden{256, 256};
  Activation mean_activation = Activation::identity;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
};

// Value-level mixture for a single state: weights w, and per-primitive
// Gaussian means / standard deviations laid out [K, action_dim].
struct MixtureOutput {
  std::vector<double> weights;
  Tensor mean;
  Tensor std;

  std::size_t k() const { return weights.size(); }
  std::size_t action_dim() const { return mean.cols(); }
};

struct SampledAction {
  std::vector<double> action;  // squashed into (-1, 1) when requested
  std::vector<double> raw;     // pre-squash Gaussian draw
  std::size_t component = 0;
  double log_prob_mixture = 0.0;
  std::vector<double> per_primitive_log_prob;
};

struct PrimitiveSample {
  std::vector<double> action;
  std::vector<double> raw;
  double log_prob = 0.0;  // log pi_i(a^i | s); the entropy term is its negation
};

// Differentiable batch forward result. Column k*action_dim + d of mean/log_std
// is dimension d of primitive k.
struct MixtureBatch {
  Var logits;
  Var weights;
  Var log_weights;
  Var mean;
  Var log_std;
  Var std;
  std::size_t k = 0;
  std::size_t action_dim = 0;

  std::size_t rows() const { return weights.rows(); }

  MixtureOutput at(std::size_t row) const {
    MixtureOutput out;
    const auto w = weights.value().row(row);
    out.weights.assign(w.begin(), w.end());
    const auto m = mean.value().row(row);
    const auto s = std.value().row(row);
    out.mean = Tensor(Shape{k, action_dim}, std::vector<double>(m.begin(), m.end()));
    out.std = Tensor(Shape{k, action_dim}, std::vector<double>(s.begin(), s.end()));
    return out;
  }
};

// Routing network (theta) and primitive networks (psi) of the mixture policy.
// The routing head reads detached trunk features, so theta and psi are disjoint:
// theta = routing head, psi = trunk + mean head + log-std head.
class MixturePolicy {
 public:
  struct Bound {
    BoundMlp trunk, routing, mean, log_std;
  };

  MixturePolicy() = default;

  MixturePolicy(MixturePolicyConfig config, Rng& rng) : config_(std::move(config)) {
    if (config_.k == 0) throw ConfigError("mixture policy needs K >= 1");
    if (config_.observation_dim == 0 || config_.action_dim == 0) {
      throw ConfigError("mixture policy needs non-zero observation and action dimensions");
    }
    std::vector<std::size_t> sizes{config_.observation_dim};
    sizes.insert(sizes.end(), config_.hidden.begin(), config_.hidden.end());
    const std::size_t features = sizes.back();
    const std::size_t heads = config_.k * config_.action_dim;
    // Construction order fixes RNG consumption: trunk, mean, log-std, routing.
    trunk_ = Mlp("trunk", sizes, std::vector<Activation>(sizes.size() - 1, Activation::relu), rng);
    mean_head_ = Mlp("mean", {features, heads}, {config_.mean_activation}, rng);
    log_std_head_ = Mlp("log_std", {features, heads}, {Activation::identity}, rng);
    routing_ = Mlp("routing", {features, config_.k}, {Activation::identity}, rng);
  }

  const MixturePolicyConfig& config() const { return config_; }
  std::size_t k() const { return config_.k; }
  std::size_t action_dim() const { return config_.action_dim; }
  std::size_t observation_dim() const { return config_.observation_dim; }

  Mlp& trunk() { return trunk_; }
  Mlp& routing() { return routing_; }
  Mlp& mean_head() { return mean_head_; }
  Mlp& log_std_head() { return log_std_head_; }

  Bound bind(Tape& tape) const {
    return {trunk_.bind(tape), routing_.bind(tape), mean_head_.bind(tape), log_std_head_.bind(tape)};
  }
  Bound bind_frozen(Tape& tape) const {
    return {trunk_.bind_frozen(tape), routing_.bind_frozen(tape), mean_head_.bind_frozen(tape),
            log_std_head_.bind_frozen(tape)};
  }

  MixtureBatch forward(const Bound& bound, Var states) const {
    if (states.value().rank() != 2 || states.cols() != config_.observation_dim) {
      throw ConfigError("mixture policy: state width " + std::to_string(states.cols()) + " != " +
                        std::to_string(config_.observation_dim));
    }
    MixtureBatch out;
    out.k = config_.k;
    out.action_dim = config_.action_dim;
    const Var features = trunk_.forward(bound.trunk, states);
    out.logits = routing_.forward(bound.routing, detach(features));
    out.weights = softmax_rows(out.logits);
    out.log_weights = log_softmax_rows(out.logits);
    out.mean = mean_head_.forward(bound.mean, features);
    out.log_std = clamp(log_std_head_.forward(bound.log_std, features), config_.log_std_min, config_.log_std_max);
    out.std = exp(out.log_std);
    if (!out.weights.value().all_finite() || !out.mean.value().all_finite() || !out.std.value().all_finite()) {
      throw TrainingError("mixture policy produced non-finite activations");
    }
    return out;
  }

  MixtureBatch forward(Tape& tape, Var states) const { return forward(bind(tape), states); }

  std::vector<ParamRef> routing_parameters() { return routing_.parameters(); }
  std::vector<ParamRef> primitive_parameters() {
    std::vector<ParamRef> refs = trunk_.parameters();
    for (auto& r : mean_head_.parameters()) refs.push_back(r);
    for (auto& r : log_std_head_.parameters()) refs.push_back(r);
    return refs;
  }
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> refs = primitive_parameters();
    for (auto& r : routing_parameters()) refs.push_back(r);
    return refs;
  }

  static std::vector<Tensor> routing_gradients(const Gradients& g, const Bound& b) {
    return Mlp::gradients(g, b.routing);
  }
  static std::vector<Tensor> primitive_gradients(const Gradients& g, const Bound& b) {
    std::vector<Tensor> out = Mlp::gradients(g, b.trunk);
    for (auto& t : Mlp::gradients(g, b.mean)) out.push_back(std::move(t));
    for (auto& t : Mlp::gradients(g, b.log_std)) out.push_back(std::move(t));
    return out;
  }

 private:
  MixturePolicyConfig config_;
  Mlp trunk_, routing_, mean_head_, log_std_head_;
};

inline Tensor as_row(std::span<const double> state) {
  return Tensor(Shape{1, state.size()}, std::vector<double>(state.begin(), state.end()));
}

// Single-state forward. The tape records the pass so callers may differentiate it.
inline MixtureOutput mixture_forward(const MixturePolicy& policy, std::span<const double> state, Tape& tape) {
  return policy.forward(tape, tape.constant(as_row(state))).at(0);
}

inline MixtureOutput mixture_forward(const MixturePolicy& policy, std::span<const double> state) {
  Tape tape;
  return policy.forward(policy.bind_frozen(tape), tape.constant(as_row(state))).at(0);
}

// log pi_i(raw) for every primitive i, including the tanh Jacobian when squashing.
inline std::vector<double> primitive_log_probs_raw(const MixtureOutput& out, std::span<const double> raw,
                                                   bool squash) {
  const std::size_t dims = out.action_dim();
  double correction = 0.0;
  if (squash) {
    for (std::size_t d = 0; d < dims; ++d) correction += tanh_log_jacobian(raw[d]);
  }
  std::vector<double> result(out.k());
  for (std::size_t i = 0; i < out.k(); ++i) {
    double gauss = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      const double z = (raw[d] - out.mean(i, d)) / out.std(i, d);
      gauss += -0.5 * z * z - std::log(out.std(i, d)) - kHalfLog2Pi;
    }
    result[i] = gauss - correction;
  }
  return result;
}

// log sum_i w_i pi_i(raw), via logsumexp over components.
inline double mixture_log_prob_raw(const MixtureOutput& out, std::span<const double> raw, bool squash) {
  const std::size_t dims = out.action_dim();
  std::vector<double> terms(out.k());
  for (std::size_t i = 0; i < out.k(); ++i) {
    double gauss = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      const double z = (raw[d] - out.mean(i, d)) / out.std(i, d);
      gauss += -0.5 * z * z - std::log(out.std(i, d)) - kHalfLog2Pi;
    }
    terms[i] = std::log(out.weights[i]) + gauss;
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  double result = m + std::log(s);
  if (squash) {
    double correction = 0.0;
    for (std::size_t d = 0; d < dims; ++d) correction += tanh_log_jacobian(raw[d]);
    result -= correction;
  }
  return result;
}

inline double log_prob(const MixtureOutput& out, std::span<const double> action, bool squash) {
  if (action.size() != out.action_dim()) throw UsageError("log_prob: action dimension mismatch");
  if (!squash) return mixture_log_prob_raw(out, action, false);
  std::vector<double> raw(action.size());
  for (std::size_t d = 0; d < action.size(); ++d) {
    if (!(std::abs(action[d]) < 1.0)) throw DomainError("log_prob: squashed action component outside (-1, 1)");
    raw[d] = std::atanh(action[d]);
  }
  return mixture_log_prob_raw(out, raw, true);
}

// Ancestral draw: component k ~ Categorical(w), then raw ~ N(mu_k, sigma_k^2).
// With K = 1 no categorical draw is consumed.
inline SampledAction sample(const MixtureOutput& out, Rng& rng, bool squash) {
  SampledAction s;
  s.component = out.k() == 1 ? 0 : rng.categorical(out.weights);
  const std::size_t dims = out.action_dim();
  s.raw.resize(dims);
  s.action.resize(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    s.raw[d] = out.mean(s.component, d) + out.std(s.component, d) * rng.normal();
    s.action[d] = squash ? std::tanh(s.raw[d]) : s.raw[d];
  }
  s.log_prob_mixture = mixture_log_prob_raw(out, s.raw, squash);
  s.per_primitive_log_prob = primitive_log_probs_raw(out, s.raw, squash);
  return s;
}

// One draw from every primitive, each scored under its own density only.
inline std::vector<PrimitiveSample> per_primitive_samples(const MixtureOutput& out, Rng& rng, bool squash) {
  std::vector<PrimitiveSample> result(out.k());
  const std::size_t dims = out.action_dim();
  for (std::size_t i = 0; i < out.k(); ++i) {
    PrimitiveSample& p = result[i];
    p.raw.resize(dims);
    p.action.resize(dims);
    double log_prob = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      const double eps = rng.normal();
      p.raw[d] = out.mean(i, d) + out.std(i, d) * eps;
      p.action[d] = squash ? std::tanh(p.raw[d]) : p.raw[d];
      log_prob += -0.5 * eps * eps - std::log(out.std(i, d)) - kHalfLog2Pi;
      if (squash) log_prob -= tanh_log_jacobian(p.raw[d]);
    }
    p.log_prob = log_prob;
  }
  return result;
}

// ---- differentiable batch densities --------------------------------------

struct PrimitiveActions {
  Var actions;    // [B, K*A], squashed if requested
  Var raw;        // [B, K*A]
  Var log_probs;  // [B, K], log pi_i(a^i | s)
};

// Pathwise sample a^i = mu_i + sigma_i * eps_i for all primitives at once.
inline PrimitiveActions reparameterized_actions(const MixtureBatch& batch, const Tensor& noise, bool squash) {
  Tape& tape = batch.mean.tape();
  if (noise.shape() != batch.mean.shape()) throw UsageError("reparameterized_actions: noise shape mismatch");
  const Var eps = tape.constant(noise);
  PrimitiveActions out;
  out.raw = batch.mean + batch.std * eps;
  Var per_dim = scale(square(eps), -0.5) - batch.log_std - kHalfLog2Pi;
  if (squash) {
    out.actions = tanh(out.raw);
    per_dim = per_dim - tanh_log_jacobian(out.raw);
  } else {
    out.actions = out.raw;
  }
  out.log_probs = sum_blocks(per_dim, batch.action_dim);
  return out;
}

// log pi(raw | s) of the full mixture for fixed pre-squash actions raw [B, A]; -> [B, 1].
inline Var mixture_log_prob(const MixtureBatch& batch, const Tensor& raw, bool squash) {
  Tape& tape = batch.mean.tape();
  if (raw.rows() != batch.rows() || raw.cols() != batch.action_dim) {
    throw UsageError("mixture_log_prob: action batch shape mismatch");
  }
  const Var u = tape.constant(raw);
  const Var z = (tile_cols(u, batch.k) - batch.mean) * exp(neg(batch.log_std));
  const Var gauss = sum_blocks(scale(square(z), -0.5) - batch.log_std - kHalfLog2Pi, batch.action_dim);
  Var result = logsumexp_rows(batch.log_weights + gauss);
  if (squash) {
    Tensor correction(Shape{raw.rows(), 1});
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      for (double v : raw.row(r)) correction[r] += tanh_log_jacobian(v);
    }
    result = result - tape.constant(std::move(correction));
  }
  return result;
}

}  // namespace pmoe
