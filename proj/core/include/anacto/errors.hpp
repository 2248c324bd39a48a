#pragma once

#include <stdexcept>
#include <string>

namespace anacto {

// Malformed or missing input data (files, annotation streams, clip layout).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numeric operation produced NaN/Inf or an otherwise unusable value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace anacto
