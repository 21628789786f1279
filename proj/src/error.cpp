#include "dtok/error.hpp"

namespace dtok {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDimensionOverflow: return "dimension_overflow";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kWrongKind: return "wrong_kind";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kInsufficientSamples: return "insufficient_samples";
    case ErrorCode::kNoConvergence: return "no_convergence";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kZeroNorm: return "zero_norm";
    case ErrorCode::kEmpty: return "empty";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace dtok
