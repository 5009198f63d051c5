#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/ops.hpp"
#include "pmoe/routers/routers.hpp"

namespace pmoe {

enum class PrimitiveMode { bpa, bpm };

inline const char* to_string(PrimitiveMode m) { return m == PrimitiveMode::bpa ? "bpa" : "bpm"; }

inline PrimitiveMode parse_primitive_mode(const std::string& s) {
  if (s == "bpa") return PrimitiveMode::bpa;
  if (s == "bpm") return PrimitiveMode::bpm;
  throw ConfigError("unknown primitive mode '" + s + "' (expected bpa|bpm)");
}

struct PrimitiveLossSpec {
  PrimitiveMode mode = PrimitiveMode::bpm;
  double alpha = 0.0;
  Var q_values;   // [B, K], Q(s, a^i) with a^i reparameterized
  Var log_probs;  // [B, K], log pi_i(a^i | s)
};

struct PrimitiveLossReport {
  Var loss;
  Tensor soft_values;                 // Q + alpha * H per primitive, as data
  std::vector<std::size_t> selected;  // bpm: the primitive each row trains
};

// Soft value Q(s, a^i) + alpha * H_i with H_i = -log pi_i(a^i | s).
inline Var soft_values(Var q_values, Var log_probs, double alpha) { return q_values - scale(log_probs, alpha); }

// bpa: -mean_b sum_i soft_i.  bpm: -mean_b max_i soft_i, where the max routes
// gradient into exactly one primitive per row.
inline PrimitiveLossReport primitive_loss(const PrimitiveLossSpec& spec) {
  if (spec.alpha < 0.0) throw ConfigError("entropy temperature must be non-negative");
  if (spec.q_values.shape() != spec.log_probs.shape()) throw UsageError("primitive_loss: Q and log-prob shapes differ");
  PrimitiveLossReport report;
  const Var soft = soft_values(spec.q_values, spec.log_probs, spec.alpha);
  report.soft_values = soft.value();
  const double inv_rows = 1.0 / static_cast<double>(soft.rows());
  if (spec.mode == PrimitiveMode::bpa) {
    report.loss = neg(scale(sum(soft), inv_rows));
  } else {
    compute_v_batch(report.soft_values, &report.selected);
    report.loss = neg(mean(gather_cols(soft, report.selected)));
  }
  return report;
}

struct GradientFormReport {
  // Gradients of E[Q(a)] for a ~ N(mean, exp(log_std)^2) w.r.t. mean and log_std.
  double pathwise_mean = 0.0, pathwise_mean_se = 0.0;
  double pathwise_log_std = 0.0, pathwise_log_std_se = 0.0;
  double score_mean = 0.0, score_mean_se = 0.0;
  double score_log_std = 0.0, score_log_std_se = 0.0;
};

// Compares the reparameterized gradient of primitive_loss against the
// score-function form E[-Q * grad log pi] on a 1-D Gaussian primitive.
// `critic` maps an action column [N, 1] to Q-values [N, 1] on the tape.
inline GradientFormReport score_function_form_check(double mean_value, double log_std_value,
                                                    const std::function<Var(Var)>& critic, std::size_t samples,
                                                    Rng& rng) {
  if (samples < 2) throw UsageError("score_function_form_check: need at least two samples");
  const double sigma = std::exp(log_std_value);
  Tensor eps(Shape{samples, 1});
  for (double& e : eps.data()) e = rng.normal();

  // Per-row parameter copies give per-sample gradients from one sweep.
  Tape tape;
  const Var mu = tape.variable(Tensor(Shape{samples, 1}, mean_value));
  const Var log_std = tape.variable(Tensor(Shape{samples, 1}, log_std_value));
  const Var action = mu + exp(log_std) * tape.constant(eps);
  const Var q = critic(action);
  const Var log_prob = scale(square(tape.constant(eps)), -0.5) - log_std - kHalfLog2Pi;
  const PrimitiveLossReport loss = primitive_loss({PrimitiveMode::bpm, 0.0, q, log_prob});
  const Tensor q_values = q.value();
  const Tensor actions = action.value();
  const Gradients grads = tape.backward(loss.loss);
  const Tensor g_mu = grads.of(mu);
  const Tensor g_ls = grads.of(log_std);

  const auto stats = [samples](const std::vector<double>& xs, double& m, double& se) {
    m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(samples);
    double var = 0.0;
    for (double x : xs) var += (x - m) * (x - m);
    var /= static_cast<double>(samples - 1);
    se = std::sqrt(var / static_cast<double>(samples));
  };

  std::vector<double> pm(samples), pl(samples), sm(samples), sl(samples);
  const double n = static_cast<double>(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    // loss = -mean(Q): objective gradient is -n * d loss / d param_i.
    pm[i] = -n * g_mu[i];
    pl[i] = -n * g_ls[i];
    const double z = (actions[i] - mean_value) / sigma;
    sm[i] = q_values[i] * z / sigma;
    sl[i] = q_values[i] * (z * z - 1.0);
  }
  GradientFormReport r;
  stats(pm, r.pathwise_mean, r.pathwise_mean_se);
  stats(pl, r.pathwise_log_std, r.pathwise_log_std_se);
  stats(sm, r.score_mean, r.score_mean_se);
  stats(sl, r.score_log_std, r.score_log_std_se);
  return r;
}

}  // namespace pmoe
