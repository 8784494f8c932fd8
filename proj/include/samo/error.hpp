// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace samo {

// Shape or buffer-length mismatch between operands.
class DimensionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Scalar argument outside its documented range (sparsity, rates, ...).
class ParameterError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Coordinate or index outside tensor bounds.
class IndexError : public std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Operation invoked out of order (e.g. backward before forward).
class StateError : public std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed or inconsistent run configuration / scenario input.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// No parallel configuration satisfies the per-GPU memory cap.
class InfeasibleError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace samo
