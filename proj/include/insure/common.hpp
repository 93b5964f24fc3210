// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace insure {

// All numerics run in 64-bit; gradient checking needs the head room and the
// problem sizes are small enough that speed never matters.
using Scalar = double;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Base class for every error the library raises on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes do not conform for the requested operation.
struct ShapeError : Error {
  using Error::Error;
};

/// A caller violated an operation contract (wrong mode, out-of-range label, ...).
struct ContractError : Error {
  using Error::Error;
};

/// An invalid run configuration (bad key, impossible dimension counts, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// A file could not be parsed; carries the 1-based line where parsing stopped.
struct ParseError : Error {
  ParseError(const std::string& what, long line)
      : Error(what + " (line " + std::to_string(line) + ")"), line(line) {}
  long line;
};

/// Non-finite values or out-of-domain numeric input.
struct NumericError : Error {
  using Error::Error;
};

/// A referenced entity (domain index, file, checkpoint) does not exist.
struct LookupError : Error {
  using Error::Error;
};

}  // namespace insure
