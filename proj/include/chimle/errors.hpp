#pragma once

#include <stdexcept>
#include <string>

namespace chimle {

/// Shape or channel-count mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (unrealized latent, empty pool, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite or degenerate numerics (NaN loss, non-PSD covariance, zero-norm direction).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace chimle
