#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace srlab {

enum class ErrorKind {
  // configuration / usage
  LengthMismatch,
  NonMonotone,
  ScoreOutOfRange,
  InvalidConfig,
  InvalidArgument,
  PlaceholderMissing,
  ParseError,
  // data
  UnknownPrompt,
  UnknownResponse,
  ZeroLengthResponse,
  IndexOutOfRange,
  MissingDataset,
  EmptyDataset,
  Io,
  // numerics
  SupportViolation,
  NumericOverflow,
  NonFiniteLoss,
  DegenerateInstance,
  // backends
  Http,
  Timeout,
  Backend,
  // everything else
  Internal,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Exception carrying a machine-readable kind. The CLI maps kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process exit code for an error kind: 2 usage/config, 3 backend/environment, 4 internal.
int exit_code_for(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace srlab
