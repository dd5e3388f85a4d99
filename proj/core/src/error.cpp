#include "npos/error.hpp"

namespace npos {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NotEnoughNeighbors: return "NotEnoughNeighbors";
    case ErrorCode::MTooLarge: return "MTooLarge";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::ZeroLogitNorm: return "ZeroLogitNorm";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::BadValue: return "BadValue";
  }
  return "Unknown";
}

}  // namespace npos
