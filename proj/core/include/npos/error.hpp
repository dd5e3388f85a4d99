#pragma once

#include <stdexcept>
#include <string>

namespace npos {

enum class ErrorCode {
  ZeroVector,
  NotNormalized,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  LabelOutOfRange,
  IoFailure,
  InvalidSpec,
  NotEnoughNeighbors,
  MTooLarge,
  MissingLabels,
  DimMismatch,
  EmptySet,
  ZeroLogitNorm,
  NonFiniteLoss,
  NonFiniteGradient,
  UnknownKey,
  BadValue,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace npos
