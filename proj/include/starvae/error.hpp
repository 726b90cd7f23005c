#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace starvae {

enum class ErrorCode {
  MalformedHeader,
  UnsupportedFormat,
  TruncatedData,
  MissingColumn,
  InvalidSpec,
  PatchTooLarge,
  ShapeMismatch,
  EmptyDataset,
  TooFewPoints,
  EmptyClass,
  DimMismatch,
  EmptyMask,
  EmptyRegion,
  EmptyUnion,
  BadConfig,
  Io,
};

std::string_view error_code_name(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::PatchTooLarge: return "PatchTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::EmptyUnion: return "EmptyUnion";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace starvae
