#pragma once

#include <stdexcept>
#include <string>

namespace psnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or image dimensions violate a module contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or unmatched files on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller broke an ordering/presence precondition (e.g. decoder chaining).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A loss term or tensor became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace psnet
