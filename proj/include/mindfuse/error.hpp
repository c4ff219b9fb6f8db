#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mindfuse {

enum class ErrorCode {
  kInvalidArgument,
  kIoError,
  kMalformedLine,
  kNotFound,
  kUnknownTemplate,
  kMissingBinding,
  kProviderUnavailable,
  kTimeout,
  kExtractionFailed,
  kEmptyText,
  kTooFewPoints,
  kDisjointUniverses,
  kNoOfferings,
  kShapeMismatch,
  kAllZero,
  kZeroImpressions,
  kZeroDenominator,
  kEmptyInput,
  kEmptySeries,
  kAllUndefined,
  kUndecodableImage,
  kNoActionsFound,
  kConflict,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kUnknownTemplate: return "UnknownTemplate";
    case ErrorCode::kMissingBinding: return "MissingBinding";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kExtractionFailed: return "ExtractionFailed";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kDisjointUniverses: return "DisjointUniverses";
    case ErrorCode::kNoOfferings: return "NoOfferings";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAllZero: return "AllZero";
    case ErrorCode::kZeroImpressions: return "ZeroImpressions";
    case ErrorCode::kZeroDenominator: return "ZeroDenominator";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kEmptySeries: return "EmptySeries";
    case ErrorCode::kAllUndefined: return "AllUndefined";
    case ErrorCode::kUndecodableImage: return "UndecodableImage";
    case ErrorCode::kNoActionsFound: return "NoActionsFound";
    case ErrorCode::kConflict: return "Conflict";
  }
  return "Unknown";
}

/// Domain error carrying a machine-readable code. `detail` holds the bare
/// payload (a binding name, an ad id, ...) while what() is human readable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace mindfuse
