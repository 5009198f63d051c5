#pragma once

#include <stdexcept>
#include <string>

namespace pmoe {

// Invalid construction parameters or option values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: wrong call order, empty inputs, mismatched lengths.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (NaN/Inf in losses, gradients, activations).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pmoe
