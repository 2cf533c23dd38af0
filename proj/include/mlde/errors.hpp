#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlde {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  training = 4,
  evaluation = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

namespace detail {
inline std::string join_violations(const std::vector<std::string>& violations) {
  std::string joined;
  for (const auto& v : violations) {
    if (!joined.empty()) joined += "; ";
    joined += v;
  }
  return joined;
}
}  // namespace detail

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : Error(ErrorKind::config, detail::join_violations(violations)),
        violations_(std::move(violations)) {}
  ConfigError(const std::string& message)
      : ConfigError(std::vector<std::string>{message}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Raised when a checkpoint was produced under settings that change inference
// (scales, normalization, backbone) and the caller expects different ones.
class ConfigMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& message) : Error(ErrorKind::training, message) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& message)
      : Error(ErrorKind::evaluation, message) {}
};

}  // namespace mlde
