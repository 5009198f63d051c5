#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pmoe/pmoe.hpp"

namespace pmoe::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Norm-wise relative error between analytic gradients and central finite
// differences of `value` over every element of `params`.
inline double finite_difference_error(const std::vector<ParamRef>& params, const std::function<double()>& value,
                                      const std::vector<Tensor>& analytic, double h = 1e-6) {
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = value();
      t[i] = saved - h;
      const double down = value();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

// Gradient check for a loss of free tensors.
inline double check_tensor_gradients(std::vector<Tensor> inputs,
                                     const std::function<Var(Tape&, const std::vector<Var>&)>& loss, double h = 1e-6) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < inputs.size(); ++i) refs.push_back({"x" + std::to_string(i), &inputs[i]});
  auto value = [&] {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    return loss(tape, vars).value().item();
  };
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  const Gradients g = tape.backward(loss(tape, vars));
  std::vector<Tensor> analytic;
  for (const Var& v : vars) analytic.push_back(g.of(v));
  return finite_difference_error(refs, value, analytic, h);
}

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace pmoe::testing
