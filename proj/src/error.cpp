#include "treedsb/error.hpp"

namespace treedsb {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::SameNode: return "SameNode";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::HorizonTooSmall: return "HorizonTooSmall";
    case ErrorCode::OddN: return "OddN";
    case ErrorCode::NonFiniteDrift: return "NonFiniteDrift";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownLeaf: return "UnknownLeaf";
    case ErrorCode::NotStarTree: return "NotStarTree";
    case ErrorCode::RootIsLeaf: return "RootIsLeaf";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::NotTreeFactorized: return "NotTreeFactorized";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::ConstraintViolation: return "ConstraintViolation";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace treedsb
