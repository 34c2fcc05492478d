#pragma once

#include <stdexcept>
#include <string>

namespace metatte {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or width mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Two structures that must agree (keys, shapes, ids) do not.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Input too small or empty to be meaningful (n < 2, empty batch, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Bad user configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unwritable file. The CLI maps this to exit code 3.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed container file: bad magic, version, truncation or checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace metatte
