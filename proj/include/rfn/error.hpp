#pragma once

#include <stdexcept>
#include <string>

namespace rfn {

// Base of every error the library raises. The CLI maps the subclasses onto
// exit codes (usage 1, data 2, divergence 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed configuration, unknown field, bad argument.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A numeric primitive was called outside its domain (log of a non-positive
// value, non-finite intermediate in a flow, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfn
