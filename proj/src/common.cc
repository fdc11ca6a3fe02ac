#include "densesfm/common.h"

namespace densesfm {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kOutOfImage: return "OutOfImage";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kCheiralityFailure: return "CheiralityFailure";
    case ErrorCode::kPairMismatch: return "PairMismatch";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kNonPositiveConfidence: return "NonPositiveConfidence";
    case ErrorCode::kDegenerateGauge: return "DegenerateGauge";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kAlignmentFailure: return "AlignmentFailure";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace densesfm
