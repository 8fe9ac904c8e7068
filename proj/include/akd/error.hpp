#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace akd {

// Process exit codes surfaced by the CLI. Library code only throws; the CLI
// maps exception types onto these.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kState = 3,
  kBackend = 4,
  kTrainer = 5,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kUsage; }
};

// A caller violated an operation's precondition (empty text, bad threshold...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration. Carries one diagnostic per offending field.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const noexcept { return issues_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }

 private:
  std::vector<std::string> issues_;
};

// Missing, locked, corrupt, or version-mismatched state on disk.
class StateError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kState; }
};

// Transport failure after retries, or a non-transient HTTP status.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int last_status = 0)
      : Error(what), last_status_(last_status) {}
  int last_status() const noexcept { return last_status_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kBackend; }

 private:
  int last_status_;
};

// A stage lost too many items to backend/parse failures to be trusted.
class StageError : public BackendError {
 public:
  explicit StageError(const std::string& what) : BackendError(what) {}
};

class TrainerError : public Error {
 public:
  TrainerError(const std::string& what, std::string captured_output = {})
      : Error(what), output_(std::move(captured_output)) {}
  const std::string& captured_output() const noexcept { return output_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kTrainer; }

 private:
  std::string output_;
};

// Referee output without both labelled scores.
class ParseError : public Error {
 public:
  using Error::Error;
};

inline ConfigError::ConfigError(std::vector<std::string> issues)
    : Error([&] {
        std::string msg = "invalid config";
        for (const auto& issue : issues) msg += "\n  " + issue;
        return msg;
      }()),
      issues_(std::move(issues)) {}

}  // namespace akd
