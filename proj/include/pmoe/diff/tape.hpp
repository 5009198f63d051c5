#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/diff/tensor.hpp"

namespace pmoe {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// What a node's local-gradient rule sees during the reverse sweep.
class BackwardContext {
 public:
  BackwardContext(const Tape& tape, std::size_t node, const Tensor& grad, std::vector<Tensor>& grads)
      : tape_(tape), node_(node), grad_(grad), grads_(grads) {}

  const Tensor& grad() const { return grad_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  // Accumulator for input i, or nullptr when that input carries no gradient.
  Tensor* input_grad(std::size_t i);

 private:
  const Tape& tape_;
  std::size_t node_;
  const Tensor& grad_;
  std::vector<Tensor>& grads_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Gradients produced by one reverse sweep, indexed by node id.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  // Zero tensor of the node's shape when no gradient reached it.
  Tensor of(Var v) const {
    if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
    return Tensor(shapes_.at(v.id()), 0.0);
  }
  bool reached(Var v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

 private:
  std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
// recording order is a topological order and backward is a single reverse scan.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false, "constant"); }
  Var variable(Tensor value) { return push(std::move(value), {}, nullptr, true, "variable"); }

  // Records an op; it carries gradient iff some input does.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
    return push(std::move(value), std::move(inputs), needs ? std::move(backward) : BackwardFn{}, needs, op);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // True iff gradient can flow from `output` back into `input` along recorded edges.
  bool depends_on(Var output, Var input) const {
    if (input.id() > output.id()) return false;
    std::vector<char> live(output.id() + 1, 0);
    live[output.id()] = 1;
    for (std::size_t id = output.id() + 1; id-- > input.id();) {
      if (!live[id] || !nodes_[id].requires_grad) continue;
      if (id == input.id()) return true;
      for (std::size_t in : nodes_[id].inputs) live[in] = 1;
    }
    return false;
  }

  Gradients backward(Var loss) {
    if (consumed_) throw UsageError("backward called twice on the same tape");
    if (loss.value().size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    consumed_ = true;
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id()] = Tensor(loss.shape(), 1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (grads[id].empty() || !node.backward) continue;
      BackwardContext ctx(*this, id, grads[id], grads);
      node.backward(ctx);
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const Node& n : nodes_) shapes.push_back(n.value.shape());
    return Gradients(std::move(grads), std::move(shapes));
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "";
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, bool requires_grad,
           const char* op) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), requires_grad, op});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

inline const Tensor& BackwardContext::output() const { return tape_.value(node_); }
inline const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.value(tape_.inputs(node_)[i]);
}
inline Tensor* BackwardContext::input_grad(std::size_t i) {
  const std::size_t in = tape_.inputs(node_)[i];
  if (!tape_.requires_grad(in)) return nullptr;
  if (grads_[in].empty()) grads_[in] = Tensor(tape_.value(in).shape(), 0.0);
  return &grads_[in];
}

}  // namespace pmoe
