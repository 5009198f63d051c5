#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/ops.hpp"
#include "pmoe/policy/mixture_policy.hpp"

namespace pmoe {

enum class RouterKind { freq, gumbel, reinforce, gating };

inline const char* to_string(RouterKind r) {
  switch (r) {
    case RouterKind::freq: return "freq";
    case RouterKind::gumbel: return "gumbel";
    case RouterKind::reinforce: return "reinforce";
    case RouterKind::gating: return "gating";
  }
  return "?";
}

inline RouterKind parse_router(const std::string& s) {
  if (s == "freq") return RouterKind::freq;
  if (s == "gumbel") return RouterKind::gumbel;
  if (s == "reinforce") return RouterKind::reinforce;
  if (s == "gating") return RouterKind::gating;
  throw ConfigError("unknown router '" + s + "' (expected freq|gumbel|reinforce|gating)");
}

// One-hot marker of the primitive whose sampled action scores highest.
struct BestPrimitiveIndicator {
  std::vector<double> v;
  std::size_t best_index = 0;
  std::vector<double> q_values;
};

// Argmax with lowest-index tie-break. Takes plain values: nothing upstream of
// q_values can receive gradient through the indicator.
inline BestPrimitiveIndicator compute_v(std::span<const double> q_values) {
  if (q_values.empty()) throw UsageError("compute_v: need at least one Q-value");
  BestPrimitiveIndicator out;
  out.q_values.assign(q_values.begin(), q_values.end());
  for (std::size_t i = 0; i < q_values.size(); ++i) {
    if (std::isnan(q_values[i])) throw TrainingError("compute_v: NaN Q-value for primitive " + std::to_string(i));
    if (q_values[i] > q_values[out.best_index]) out.best_index = i;
  }
  out.v.assign(q_values.size(), 0.0);
  out.v[out.best_index] = 1.0;
  return out;
}

// Row-wise compute_v over a [B, K] value matrix; returns the one-hot [B, K] target.
inline Tensor compute_v_batch(const Tensor& q_values, std::vector<std::size_t>* best = nullptr) {
  Tensor v(q_values.shape(), 0.0);
  if (best) best->assign(q_values.rows(), 0);
  for (std::size_t r = 0; r < q_values.rows(); ++r) {
    const BestPrimitiveIndicator ind = compute_v(q_values.row(r));
    v(r, ind.best_index) = 1.0;
    if (best) (*best)[r] = ind.best_index;
  }
  return v;
}

struct RouterLossReport {
  Var loss;
  std::vector<double> residual;  // batch-mean delta_k = w_k - 1[k best]
  RouterKind estimator = RouterKind::freq;
};

// Batch mean of ||v - w||^2. Its gradient w.r.t. w_k is 2 * (w_k - v_k), i.e.
// twice the frequency approximate gradient; the factor is absorbed by the step size.
inline RouterLossReport freq_loss(Var weights, const Tensor& v) {
  if (v.shape() != weights.shape()) throw UsageError("freq_loss: indicator shape must match weights");
  Tape& tape = weights.tape();
  RouterLossReport report;
  report.estimator = RouterKind::freq;
  report.loss = scale(sum(square(tape.constant(v) - weights)), 1.0 / static_cast<double>(v.rows()));
  const Tensor& w = weights.value();
  report.residual.assign(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) report.residual[c] += (w(r, c) - v(r, c)) / static_cast<double>(w.rows());
  }
  return report;
}

// softmax((logits + g) / temperature) with g ~ Gumbel(0, 1) i.i.d.; differentiable in logits.
inline Var gumbel_router_sample(Var logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("gumbel temperature must be positive");
  Tensor noise(logits.shape());
  for (double& g : noise.data()) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    g = -std::log(-std::log(u));
  }
  return softmax_rows(scale(logits + logits.tape().constant(std::move(noise)), 1.0 / temperature));
}

// Score-function surrogate: -mean(signal * log w_k) over the batch, with k the
// ancestrally sampled component and signal treated as data.
inline RouterLossReport reinforce_router_loss(Var log_weights, const std::vector<std::size_t>& component,
                                              const Tensor& signal) {
  if (signal.size() != log_weights.rows()) throw UsageError("reinforce_router_loss: one signal per row");
  Tape& tape = log_weights.tape();
  const Tensor column(Shape{signal.size(), 1}, std::vector<double>(signal.data().begin(), signal.data().end()));
  RouterLossReport report;
  report.estimator = RouterKind::reinforce;
  report.loss = -mean(gather_cols(log_weights, component) * tape.constant(column));
  return report;
}

// Subtracts the batch mean (the control variate used by the REINFORCE baseline).
inline Tensor baseline_subtracted(const Tensor& signal) {
  double m = 0.0;
  for (double v : signal.data()) m += v;
  m /= static_cast<double>(signal.size());
  Tensor out = signal;
  for (double& v : out.data()) v -= m;
  return out;
}

// Gating collapses the mixture to one Gaussian: mean sum_i w_i mu_i, variance sum_i w_i sigma_i^2.
struct GatedGaussian {
  Var mean;     // [B, A]
  Var std;      // [B, A]
  Var log_std;  // [B, A]
};

inline GatedGaussian gating_gaussian(const MixtureBatch& batch) {
  const Var w = repeat_blocks(batch.weights, batch.action_dim);
  GatedGaussian g;
  g.mean = sum_across_blocks(w * batch.mean, batch.action_dim);
  const Var variance = sum_across_blocks(w * square(batch.std), batch.action_dim);
  g.std = sqrt(variance);
  g.log_std = scale(log(variance), 0.5);
  return g;
}

// Value-level gating draw for one state (reparameterized single Gaussian).
inline std::vector<double> gating_compose(const MixtureOutput& out, Rng& rng, std::vector<double>* raw_mean = nullptr,
                                          std::vector<double>* raw_std = nullptr) {
  const std::size_t dims = out.action_dim();
  std::vector<double> mean(dims, 0.0), variance(dims, 0.0), action(dims);
  for (std::size_t i = 0; i < out.k(); ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      mean[d] += out.weights[i] * out.mean(i, d);
      variance[d] += out.weights[i] * out.std(i, d) * out.std(i, d);
    }
  }
  for (std::size_t d = 0; d < dims; ++d) action[d] = mean[d] + std::sqrt(variance[d]) * rng.normal();
  if (raw_mean) *raw_mean = mean;
  if (raw_std) {
    raw_std->resize(dims);
    for (std::size_t d = 0; d < dims; ++d) (*raw_std)[d] = std::sqrt(variance[d]);
  }
  return action;
}

}  // namespace pmoe
