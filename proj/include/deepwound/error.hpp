#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deepwound {

enum class ErrorCode {
  // imaging
  kMalformedImage,
  kUnsupportedFormat,
  kEmptyImage,
  kImageTooSmall,
  kShapeMismatch,
  kInvalidConfig,
  // dataset
  kManifestParseError,
  kDuplicatePath,
  kInvalidRatio,
  kIoError,
  // model
  kWeightsUnavailable,
  kCorruptBundle,
  kNonFiniteLoss,
  // ensemble / metrics
  kWrongArity,
  kLengthMismatch,
  kEmptySample,
  kDegenerateTruth,
};

std::string_view to_string(ErrorCode code);

/// Coarse grouping used for process exit codes.
enum class ErrorDomain { kData, kModel };

ErrorDomain domain_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace deepwound
