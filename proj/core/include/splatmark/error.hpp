#pragma once

#include <stdexcept>
#include <string>

namespace splatmark {

/// Categories surfaced to the command line as distinct exit codes.
enum class ErrorKind {
  kConfig = 2,
  kCapacity = 3,
  kCorruption = 4,
  kDivergence = 5,
  kFormat = 6,
  kInput = 7,
  kIo = 8,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// Cross-field configuration rule violated (L mod G, token budget, ranges).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// Lookup table does not fit the vocabulary.
class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what) : Error(ErrorKind::kCapacity, what) {}
};

/// Artifact content disagrees with its bound hashes, or a token is not in the table.
class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& what) : Error(ErrorKind::kCorruption, what) {}
};

/// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::kDivergence, what) {}
};

/// Malformed file container.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

/// Argument outside its domain (shape mismatch, pixel range, bad bit string).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

}  // namespace splatmark
