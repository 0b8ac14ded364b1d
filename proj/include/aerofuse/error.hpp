#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aerofuse {

enum class ErrorCode {
  // geometry
  NonPositiveDepth,
  DegenerateGeometry,
  MissingPrior,
  HorizonRay,
  InvalidArgument,
  // clustering
  InsufficientFrames,
  InsufficientOverlap,
  // bundle adjustment
  TooFewCorrespondences,
  NoConsensus,
  DisconnectedCluster,
  SingularSystem,
  Diverged,
  // anchor / densifier
  EmptyAnchor,
  ContractViolation,
  ExternalTimeout,
  DimensionMismatch,
  // fusion
  OutOfVolume,
  EmptyVolume,
  NoImagery,
  // metrics
  ZeroGroundTruth,
  TooFewCells,
  // pipeline
  ConfigError,
  InputFormatError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-readable code; every module reports failures
/// through this type so callers can branch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace aerofuse
