#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace failscape {

enum class ErrorCode {
  kInvalidArgument,
  kIndexOutOfRange,
  kUnknownPlaceholder,
  kInvalidTemplate,
  kEmptyTemplateSet,
  kBackendUnavailable,
  kTimeout,
  kAuthError,
  kParseError,
  kContentRefusal,
  kInsufficientValidTemplates,
  kReplayMiss,
  kNonFiniteScore,
  kShapeMismatch,
  kEmptyHistogram,
  kDimensionMismatch,
  kEmptySupport,
  kEmptySelection,
  kEmptySamples,
  kSpaceMismatch,
  kHookFailed,
  kHookTimeout,
  kRunClosed,
  kRunNotFound,
  kCorruptRecord,
  kSchemaVersionUnsupported,
  kJsonParse,
  kInvalidSelection,
  kJobAlreadyRunning,
  kJobNotFound,
  kNotFound,
  kIo,
};

// Stable machine-readable name, used by the CLI and the HTTP service.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace failscape
