#pragma once

#include <stdexcept>
#include <string>

namespace llvrp {

// Root of every error thrown by the library. The CLI maps subclasses to exit
// codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A masked distribution or a tour has no feasible completion.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFeature : public ParseError {
 public:
  using ParseError::ParseError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A reference cost is zero or negative, so relative gaps are undefined.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace llvrp
