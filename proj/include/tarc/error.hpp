#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tarc {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNotSpd,
  kNonHurwitz,
  kSingularSystem,
  kKernelOrderMismatch,
  kNoFeasiblePoint,
  kBracketNotFound,
  kInfeasibleCertificate,
  kOrderExceedsDegree,
  kOutOfWindow,
  kDegreeTooLarge,
  kOddSubintervals,
  kBufferCold,
  kIllConditionedMhat,
  kIllConditionedInertia,
  kNonPhysicalParams,
  kEmptyTrace,
  kNumericalBlowup,
  kConfigError,
  kUnknownKey,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNotSpd: return "NotSPD";
    case ErrorCode::kNonHurwitz: return "NonHurwitz";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kKernelOrderMismatch: return "KernelOrderMismatch";
    case ErrorCode::kNoFeasiblePoint: return "NoFeasiblePoint";
    case ErrorCode::kBracketNotFound: return "BracketNotFound";
    case ErrorCode::kInfeasibleCertificate: return "InfeasibleCertificate";
    case ErrorCode::kOrderExceedsDegree: return "OrderExceedsDegree";
    case ErrorCode::kOutOfWindow: return "OutOfWindow";
    case ErrorCode::kDegreeTooLarge: return "DegreeTooLarge";
    case ErrorCode::kOddSubintervals: return "OddSubintervals";
    case ErrorCode::kBufferCold: return "BufferCold";
    case ErrorCode::kIllConditionedMhat: return "IllConditionedMhat";
    case ErrorCode::kIllConditionedInertia: return "IllConditionedInertia";
    case ErrorCode::kNonPhysicalParams: return "NonPhysicalParams";
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kNumericalBlowup: return "NumericalBlowup";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kUnknownKey: return "UnknownKey";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tarc
