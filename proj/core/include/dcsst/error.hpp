// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dcsst {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training, window, or data configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Class index or step index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward on a non-scalar, double backward, and so on.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation while checked mode is on.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Messages carry the byte offset when known.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or file format version the reader does not understand.
class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A metric that has no defined value for the given input.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcsst
