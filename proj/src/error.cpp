#include "aerofuse/error.hpp"

namespace aerofuse {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::MissingPrior: return "MissingPrior";
    case ErrorCode::HorizonRay: return "HorizonRay";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientFrames: return "InsufficientFrames";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::DisconnectedCluster: return "DisconnectedCluster";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::EmptyAnchor: return "EmptyAnchor";
    case ErrorCode::ContractViolation: return "ContractViolation";
    case ErrorCode::ExternalTimeout: return "ExternalTimeout";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OutOfVolume: return "OutOfVolume";
    case ErrorCode::EmptyVolume: return "EmptyVolume";
    case ErrorCode::NoImagery: return "NoImagery";
    case ErrorCode::ZeroGroundTruth: return "ZeroGroundTruth";
    case ErrorCode::TooFewCells: return "TooFewCells";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InputFormatError: return "InputFormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace aerofuse
