#pragma once

#include <stdexcept>
#include <string>

namespace pnr {

// Base for all library failures. The CLI maps each subclass onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, shape mismatches, invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

// File missing, unwritable, truncated, malformed or failing its checksum.
class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or an ill-conditioned numeric request.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pnr
