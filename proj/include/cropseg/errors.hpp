#pragma once

#include <stdexcept>
#include <string>

namespace cropseg {

// Error taxonomy shared by the library and the CLI. The CLI maps each class
// to a process exit code (config 2, data 3, integrity 4, divergence 5).
enum class ErrorKind { config = 2, data = 3, integrity = 4, divergence = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad configuration, invalid arguments, or shape/dimension mismatches.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};

// Unusable input data (non-finite values, empty datasets, missing files).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

// Corrupt on-disk artifact. `entry` names the offending parameter path or
// patch id when known.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& entry, const std::string& msg)
      : Error(ErrorKind::integrity, entry.empty() ? msg : msg + " (entry: " + entry + ")"),
        entry_(entry) {}
  const std::string& entry() const { return entry_; }

 private:
  std::string entry_;
};

// Training produced a non-finite loss. `step` is the global optimizer step.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& msg)
      : Error(ErrorKind::divergence, msg + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace cropseg
