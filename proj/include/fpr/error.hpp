#pragma once

#include <stdexcept>
#include <string>

namespace fpr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unknown configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, missing or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A mission could not be attached to the merged map.
class UnanchoredMissionError : public Error {
 public:
  explicit UnanchoredMissionError(std::string mission)
      : Error("mission unanchored: " + mission), mission_(std::move(mission)) {}

  const std::string& mission() const { return mission_; }

 private:
  std::string mission_;
};

}  // namespace fpr
