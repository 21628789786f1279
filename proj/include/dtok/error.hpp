#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtok {

enum class ErrorCode {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDimensionOverflow,
  kUnsupported,
  kWrongKind,
  kNonFinite,
  kShapeMismatch,
  kInvalidArgument,
  kInsufficientSamples,
  kNoConvergence,
  kDegenerate,
  kSingular,
  kZeroNorm,
  kEmpty,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace dtok
