#pragma once

#include <stdexcept>
#include <string>

namespace tcace {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (log of x <= 0, t outside [0,1]).
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a loss term, gradient, or optimizer state.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace tcace
