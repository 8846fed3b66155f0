#include "failscape/errors.hpp"

namespace failscape {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kUnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorCode::kInvalidTemplate: return "InvalidTemplate";
    case ErrorCode::kEmptyTemplateSet: return "EmptyTemplateSet";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kAuthError: return "AuthError";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kContentRefusal: return "ContentRefusal";
    case ErrorCode::kInsufficientValidTemplates: return "InsufficientValidTemplates";
    case ErrorCode::kReplayMiss: return "ReplayMiss";
    case ErrorCode::kNonFiniteScore: return "NonFiniteScore";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyHistogram: return "EmptyHistogram";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptySupport: return "EmptySupport";
    case ErrorCode::kEmptySelection: return "EmptySelection";
    case ErrorCode::kEmptySamples: return "EmptySamples";
    case ErrorCode::kSpaceMismatch: return "SpaceMismatch";
    case ErrorCode::kHookFailed: return "HookFailed";
    case ErrorCode::kHookTimeout: return "HookTimeout";
    case ErrorCode::kRunClosed: return "RunClosed";
    case ErrorCode::kRunNotFound: return "RunNotFound";
    case ErrorCode::kCorruptRecord: return "CorruptRecord";
    case ErrorCode::kSchemaVersionUnsupported: return "SchemaVersionUnsupported";
    case ErrorCode::kJsonParse: return "JsonParse";
    case ErrorCode::kInvalidSelection: return "InvalidSelection";
    case ErrorCode::kJobAlreadyRunning: return "JobAlreadyRunning";
    case ErrorCode::kJobNotFound: return "JobNotFound";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace failscape
