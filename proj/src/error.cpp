#include "srlab/error.hpp"

namespace srlab {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonMonotone: return "NonMonotone";
    case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::PlaceholderMissing: return "PlaceholderMissing";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnknownPrompt: return "UnknownPrompt";
    case ErrorKind::UnknownResponse: return "UnknownResponse";
    case ErrorKind::ZeroLengthResponse: return "ZeroLengthResponse";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::MissingDataset: return "MissingDataset";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::SupportViolation: return "SupportViolation";
    case ErrorKind::NumericOverflow: return "NumericOverflow";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DegenerateInstance: return "DegenerateInstance";
    case ErrorKind::Http: return "HttpError";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::Backend: return "BackendError";
    case ErrorKind::Internal: return "Internal";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::LengthMismatch:
    case ErrorKind::NonMonotone:
    case ErrorKind::ScoreOutOfRange:
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidArgument:
    case ErrorKind::PlaceholderMissing:
    case ErrorKind::ParseError:
    case ErrorKind::UnknownPrompt:
    case ErrorKind::UnknownResponse:
    case ErrorKind::ZeroLengthResponse:
    case ErrorKind::IndexOutOfRange:
    case ErrorKind::MissingDataset:
    case ErrorKind::Io:
      return 2;
    case ErrorKind::Http:
    case ErrorKind::Timeout:
    case ErrorKind::Backend:
      return 3;
    case ErrorKind::SupportViolation:
    case ErrorKind::NumericOverflow:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::DegenerateInstance:
    case ErrorKind::EmptyDataset:
    case ErrorKind::Internal:
      return 4;
  }
  return 4;
}

}  // namespace srlab
