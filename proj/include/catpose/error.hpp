#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace catpose {

enum class ErrorCode {
  DegenerateInput,
  NoConsensus,
  BehindCamera,
  OutOfBounds,
  DimensionMismatch,
  EmptyObservation,
  ZeroExtent,
  NonFiniteActivation,
  NonFiniteGradient,
  NonFiniteLoss,
  EmptyPositives,
  EmptyNegatives,
  DegenerateViewpoint,
  NoPartMask,
  NoMatches,
  LengthMismatch,
  Format,
  Io,
  Usage,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyObservation: return "EmptyObservation";
    case ErrorCode::ZeroExtent: return "ZeroExtent";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyPositives: return "EmptyPositives";
    case ErrorCode::EmptyNegatives: return "EmptyNegatives";
    case ErrorCode::DegenerateViewpoint: return "DegenerateViewpoint";
    case ErrorCode::NoPartMask: return "NoPartMask";
    case ErrorCode::NoMatches: return "NoMatches";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Format: return "Format";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code and, once it has crossed a
/// pipeline boundary, the name of the stage that raised it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, std::string stage = {})
      : std::runtime_error(format(code, detail, stage)),
        code_(code),
        detail_(detail),
        stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  Error with_stage(std::string stage) const { return Error(code_, detail_, std::move(stage)); }

 private:
  static std::string format(ErrorCode code, const std::string& detail, const std::string& stage) {
    std::string msg;
    if (!stage.empty()) msg += "[stage=" + stage + "] ";
    msg += std::string(to_string(code));
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail = {}) {
  throw Error(code, detail);
}

}  // namespace catpose
