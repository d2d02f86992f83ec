#pragma once

#include <stdexcept>
#include <string>

namespace mhng {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model parameter violates its invariant (e.g. a precision matrix that is
/// not positive definite).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (bad counts, burn-in >= sweeps, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs whose shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Illegal protocol transition or missing decision channel.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown that cannot be recovered (e.g. every categorical
/// weight is -inf even in log space).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Unknown session or resource.
class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace mhng
