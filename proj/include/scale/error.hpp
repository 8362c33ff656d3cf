#pragma once

#include <stdexcept>
#include <string>

namespace scale {

/// Base for every error raised by the library. Callers that only need to
/// report a failure can catch this; tests match on the concrete kinds.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered; `layer` is the offending layer or -1.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer = -1) : Error(what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

/// Malformed input file (IDX, checkpoint, run directory artifacts).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Arguments are well-formed but the request cannot be satisfied
/// (infeasible partition, degenerate unlearning request, undefined metric).
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace scale
