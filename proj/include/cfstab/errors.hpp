#pragma once

#include <stdexcept>
#include <string>

namespace cfstab {

// Each error class maps onto one CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  using Error::Error;
};

// Thrown by the experiment pipeline; wraps the underlying failure with the
// name of the stage that produced it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, int code)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)), code_(code) {}
  const std::string& stage() const { return stage_; }
  int code() const { return code_; }

 private:
  std::string stage_;
  int code_;
};

namespace exit_codes {
inline constexpr int kOk = 0;
inline constexpr int kGeneric = 1;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kNumeric = 4;
inline constexpr int kVerification = 5;
}  // namespace exit_codes

int exit_code(const std::exception& e);

}  // namespace cfstab
