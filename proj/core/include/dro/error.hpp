#pragma once

#include <stdexcept>
#include <string>

namespace dro {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Mismatched matrix/vector dimensions.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Argument outside its mathematical domain (non-finite values, invalid
// probability rows, empty batches).
class DomainError : public Error {
public:
  using Error::Error;
};

// Invalid configuration value or document.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed or inconsistent input data (CSV, manifests, checkpoints).
class DataError : public Error {
public:
  using Error::Error;
};

} // namespace dro
