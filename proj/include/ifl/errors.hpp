#pragma once

#include <stdexcept>
#include <string>

namespace ifl {

// Error taxonomy maps onto CLI exit codes: config 2, data 3, numeric 4,
// anything else 5.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ifl
