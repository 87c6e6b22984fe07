#include "deepwound/error.hpp"

namespace deepwound {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedImage: return "MalformedImage";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kEmptyImage: return "EmptyImage";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kManifestParseError: return "ManifestParseError";
    case ErrorCode::kDuplicatePath: return "DuplicatePath";
    case ErrorCode::kInvalidRatio: return "InvalidRatio";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kWeightsUnavailable: return "WeightsUnavailable";
    case ErrorCode::kCorruptBundle: return "CorruptBundle";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kWrongArity: return "WrongArity";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptySample: return "EmptySample";
    case ErrorCode::kDegenerateTruth: return "DegenerateTruth";
  }
  return "Unknown";
}

ErrorDomain domain_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kWeightsUnavailable:
    case ErrorCode::kCorruptBundle:
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kWrongArity:
      return ErrorDomain::kModel;
    default:
      return ErrorDomain::kData;
  }
}

}  // namespace deepwound
