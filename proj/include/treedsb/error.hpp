#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace treedsb {

enum class ErrorCode {
  // tree_core
  CycleDetected,
  Disconnected,
  NonPositiveWeight,
  DuplicateEdge,
  UnknownNode,
  SameNode,
  NonPositiveInput,
  // measures
  UnknownKind,
  BadDimension,
  NotPositiveDefinite,
  DimensionMismatch,
  ZeroVariance,
  TooFewSamples,
  // schedule / sde
  HorizonTooSmall,
  OddN,
  NonFiniteDrift,
  StepOutOfRange,
  // drift net
  NonFinite,
  ShapeMismatch,
  // engine
  ConfigInvalid,
  TrainingDiverged,
  EmptyDataset,
  UnknownLeaf,
  NotStarTree,
  RootIsLeaf,
  // oracles
  NoConvergence,
  NumericalUnderflow,
  InstanceTooLarge,
  NotTreeFactorized,
  GridMismatch,
  // harness
  ParseError,
  UnknownKey,
  ConstraintViolation,
  SchemaError,
  Io,
};

std::string_view error_name(ErrorCode code);

// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept {
    return code_;
  }

 private:
  ErrorCode code_;
};

}  // namespace treedsb
