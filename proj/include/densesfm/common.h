#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace densesfm {

using ImageId = std::uint32_t;
using PointId = std::uint64_t;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorCode {
  kBehindCamera,
  kOutOfImage,
  kOutOfBounds,
  kDegenerateGeometry,
  kCheiralityFailure,
  kPairMismatch,
  kSingularSystem,
  kNonPositiveConfidence,
  kDegenerateGauge,
  kEmptyCloud,
  kAlignmentFailure,
  kDegenerateConfiguration,
  kConfigInvalid,
  kInvalidArgument,
  kIo,
  kParse,
};

std::string_view ErrorCodeName(ErrorCode code);

// All recoverable failures in the library are reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void Fail(ErrorCode code, const std::string& message);

}  // namespace densesfm
