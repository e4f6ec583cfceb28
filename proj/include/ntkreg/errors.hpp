#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ntkreg {

// Error families. The CLI maps each family to its own exit code.
enum class ErrorKind {
  kUsage,       // bad arguments, incompatible options
  kValidation,  // a domain object violates its invariants
  kNumerical,   // singular systems, divergence
  kIo,          // unreadable files, malformed or stale caches
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DimensionError : public UsageError {
 public:
  DimensionError(const std::string& where, std::size_t expected, std::size_t got)
      : UsageError(where + ": dimension mismatch (expected " + std::to_string(expected) + ", got " +
                   std::to_string(got) + ")") {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

class SingularityError : public NumericalError {
 public:
  explicit SingularityError(const std::string& what) : NumericalError(what) {}
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& where, std::size_t step, double value)
      : NumericalError(where + ": diverged at step " + std::to_string(step) +
                       " (objective = " + std::to_string(value) + ")"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class EmptyDatasetError : public Error {
 public:
  explicit EmptyDatasetError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class StaleCacheError : public Error {
 public:
  explicit StaleCacheError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

}  // namespace ntkreg
