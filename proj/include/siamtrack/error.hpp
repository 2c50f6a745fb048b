#pragma once

#include <stdexcept>
#include <string>

namespace siamtrack {

// Error categories surfaced by the library. The CLI maps ConfigError and
// UsageError to exit status 2, everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& what) : Error("dataset error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

}  // namespace siamtrack
