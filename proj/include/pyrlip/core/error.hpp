#pragma once

#include <stdexcept>
#include <string>

namespace pyrlip {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Invalid configuration value, detected before any computation starts.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Misuse of the gradient tape (backward on a detached tensor, mixed tapes).
class TapeError : public Error {
public:
  using Error::Error;
};

} // namespace pyrlip
