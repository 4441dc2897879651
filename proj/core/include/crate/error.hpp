#pragma once

#include <stdexcept>
#include <string>

namespace crate {

// Base class for every failure raised by the library. The CLI maps each
// subclass onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad CSV rows, unknown covariates, infeasible horizon.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A nuisance model failed to fit (non-convergence, separation, singular
// information).
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Weights or denominators fell below the configured positivity guard.
class PositivityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace crate
