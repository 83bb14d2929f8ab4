#pragma once

#include <stdexcept>
#include <string>

namespace coop {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Class label or element index out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an API contract (backward on non-scalar, factor set mismatch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Train-mode batch normalization over a batch of one.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinite loss during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

/// No cost-table row satisfies a budget. Carries the cheapest row's cost.
class InfeasibleBudgetError : public Error {
 public:
  InfeasibleBudgetError(const std::string& what, double cheapest)
      : Error(what), cheapest_(cheapest) {}
  double cheapest() const { return cheapest_; }

 private:
  double cheapest_;
};

}  // namespace coop
