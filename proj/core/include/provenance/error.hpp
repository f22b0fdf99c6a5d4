#pragma once

#include <stdexcept>
#include <string>

namespace provenance {

/// Base of every error the toolkit raises. The CLI maps the three
/// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, bad arguments, or misuse of an API contract.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, malformed, or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Failures while a computation is running (non-finite loss, I/O during
/// a run, checkpoint mismatch).
class RuntimeError : public Error {
 public:
  using Error::Error;
};

}  // namespace provenance
