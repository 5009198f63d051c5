#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/diff/ops.hpp"
#include "pmoe/diff/tape.hpp"

namespace pmoe {

enum class Activation { identity, relu, tanh, softmax };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Var apply(Activation a, Var x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::softmax: return softmax_rows(x);
  }
  return x;
}

struct Layer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Activation activation = Activation::identity;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

// A named reference to a trainable tensor, for optimizers and checkpoints.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

// Parameters registered on one tape; reuse a binding to share leaves across
// several forward passes so their gradients accumulate.
struct BoundMlp {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

class Mlp {
 public:
  Mlp() = default;

  // `sizes` lists layer widths from input to output; `activations` has one tag per layer.
  Mlp(std::string name, const std::vector<std::size_t>& sizes, const std::vector<Activation>& activations,
      Rng& rng)
      : name_(std::move(name)) {
    if (sizes.size() < 2 || activations.size() != sizes.size() - 1) {
      throw ConfigError("mlp '" + name_ + "': need one activation per layer");
    }
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      const std::size_t in = sizes[i];
      const std::size_t out = sizes[i + 1];
      if (in == 0 || out == 0) throw ConfigError("mlp '" + name_ + "': zero-width layer");
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Layer layer{Tensor(Shape{in, out}), Tensor(Shape{out}), activations[i]};
      for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
      for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
      layers_.push_back(std::move(layer));
    }
  }

  Mlp(std::string name, std::vector<Layer> layers) : name_(std::move(name)), layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (l.weight.rank() != 2 || l.bias.size() != l.out()) {
        throw ConfigError("mlp '" + name_ + "': malformed layer " + std::to_string(i));
      }
      if (i > 0 && layers_[i - 1].out() != l.in()) {
        throw ConfigError("mlp '" + name_ + "': layer " + std::to_string(i) + " input does not match");
      }
    }
  }

  const std::string& name() const { return name_; }
  std::size_t input_dim() const { return layers_.front().in(); }
  std::size_t output_dim() const { return layers_.back().out(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  BoundMlp bind(Tape& tape) const {
    BoundMlp bound;
    for (const Layer& l : layers_) {
      bound.weights.push_back(tape.variable(l.weight));
      bound.biases.push_back(tape.variable(l.bias));
    }
    return bound;
  }

  // Binding whose leaves are constants: values flow, gradients do not.
  BoundMlp bind_frozen(Tape& tape) const {
    BoundMlp bound;
    for (const Layer& l : layers_) {
      bound.weights.push_back(tape.constant(l.weight));
      bound.biases.push_back(tape.constant(l.bias));
    }
    return bound;
  }

  Var forward(const BoundMlp& bound, Var input) const {
    if (input.value().rank() != 2 || input.cols() != input_dim()) {
      throw ConfigError("mlp '" + name_ + "': expected input width " + std::to_string(input_dim()) +
                        ", got shape " + shape_string(input.shape()));
    }
    Var x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = apply(layers_[i].activation, add_bias(matmul(x, bound.weights[i]), bound.biases[i]));
    }
    return x;
  }

  Var forward(Tape& tape, Var input) const { return forward(bind(tape), input); }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      refs.push_back({name_ + "." + std::to_string(i) + ".weight", &layers_[i].weight});
      refs.push_back({name_ + "." + std::to_string(i) + ".bias", &layers_[i].bias});
    }
    return refs;
  }

  // Gradients in the same order as parameters().
  static std::vector<Tensor> gradients(const Gradients& grads, const BoundMlp& bound) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < bound.weights.size(); ++i) {
      out.push_back(grads.of(bound.weights[i]));
      out.push_back(grads.of(bound.biases[i]));
    }
    return out;
  }

 private:
  std::string name_;
  std::vector<Layer> layers_;
};

// Plain dense forward without a tape, for acting and evaluation.
inline Tensor infer(const Mlp& mlp, const Tensor& input) {
  Tape tape;
  return mlp.forward(mlp.bind_frozen(tape), tape.constant(input)).value();
}

}  // namespace pmoe
