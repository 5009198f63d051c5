#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/diff/mlp.hpp"
#include "pmoe/diff/tensor.hpp"

namespace pmoe {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  AdamState() = default;
  explicit AdamState(double lr) : learning_rate(lr) {}
};

// One bias-corrected Adam update. Moments are created on the first call.
inline void adam_step(std::span<const ParamRef> params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size()) throw UsageError("adam_step: gradient count does not match parameters");
  if (state.first_moment.empty()) {
    for (const ParamRef& p : params) {
      state.first_moment.push_back(Tensor::zeros_like(*p.tensor));
      state.second_moment.push_back(Tensor::zeros_like(*p.tensor));
    }
  }
  if (state.first_moment.size() != params.size()) throw UsageError("adam_step: optimizer bound to another parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].tensor->shape()) {
      throw UsageError("adam_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) throw TrainingError("non-finite gradient for parameter " + params[i].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor->data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= state.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

}  // namespace pmoe
