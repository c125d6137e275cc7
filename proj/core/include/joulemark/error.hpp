#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace joulemark {

enum class ErrorCode {
  // sensors
  ZeroInterval,
  RangeMismatch,
  InvalidParams,
  SensorUnavailable,
  SensorReadError,
  // generic input handling
  ParseError,
  ConfigError,
  IoError,
  // session
  LaunchFailed,
  BindFailed,
  NoSensors,
  EmptyTrace,
  InvariantViolation,
  // energy
  WindowOutOfRange,
  EmptyWindow,
  TooShort,
  TopologyMismatch,
  // protocol
  ProtocolViolation,
  InvalidLayer,
  // metrics / loadgen
  NoCompletedRequests,
  NoTokens,
  InvalidRate,
  EndpointUnreachable,
  DatasetEmpty,
  TooFewPoints,
  // analysis
  ZeroVariance,
  LengthMismatch,
  TooFewRows,
  DegenerateDesign,
  // report
  EmptyGroup,
  KeyMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every joulemark module. The code is stable and
/// is what callers (and the CLI exit-code mapping) should branch on; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace joulemark
