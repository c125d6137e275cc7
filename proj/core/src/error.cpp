#include "joulemark/error.hpp"

namespace joulemark {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroInterval: return "ZeroInterval";
    case ErrorCode::RangeMismatch: return "RangeMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::SensorUnavailable: return "SensorUnavailable";
    case ErrorCode::SensorReadError: return "SensorReadError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::LaunchFailed: return "LaunchFailed";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::NoSensors: return "NoSensors";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::TopologyMismatch: return "TopologyMismatch";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::InvalidLayer: return "InvalidLayer";
    case ErrorCode::NoCompletedRequests: return "NoCompletedRequests";
    case ErrorCode::NoTokens: return "NoTokens";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::DatasetEmpty: return "DatasetEmpty";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::DegenerateDesign: return "DegenerateDesign";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace joulemark
