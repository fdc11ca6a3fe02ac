#pragma once

#include <optional>
#include <span>

#include <Eigen/Geometry>

#include "densesfm/common.h"

namespace densesfm {

// Pinhole camera without distortion. Pixel centers sit on integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 Matrix() const;
  Mat3 InverseMatrix() const;
  // Throws kInvalidArgument when the invariants are violated.
  void Validate() const;
};

// World-to-camera rigid transform, x_cam = R * x_world + t.
//
// The unit quaternion is the canonical representation (w >= 0) so that text
// serialization round-trips bit-exactly; the rotation matrix is cached.
class CameraPose {
 public:
  CameraPose();
  CameraPose(const Eigen::Quaterniond& rotation, const Vec3& translation);
  CameraPose(const Mat3& rotation, const Vec3& translation);

  const Eigen::Quaterniond& quaternion() const { return quaternion_; }
  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  void SetRotation(const Eigen::Quaterniond& rotation);
  void SetTranslation(const Vec3& translation) { translation_ = translation; }

  Vec3 Center() const;
  Vec3 ToCamera(const Vec3& world) const { return rotation_ * world + translation_; }
  double Depth(const Vec3& world) const;

 private:
  Eigen::Quaterniond quaternion_;
  Mat3 rotation_;
  Vec3 translation_;
};

constexpr double kMinDepth = 1e-12;

// Throws kBehindCamera when the camera-frame depth is <= kMinDepth.
Vec2 Project(const Vec3& point, const CameraPose& pose, const CameraIntrinsics& k);
std::optional<Vec2> TryProject(const Vec3& point, const CameraPose& pose,
                               const CameraIntrinsics& k);

bool InImage(const Vec2& pixel, const CameraIntrinsics& k);

// Unit-norm viewing ray direction (world frame) through a pixel.
Vec3 PixelRay(const Vec2& pixel, const CameraPose& pose, const CameraIntrinsics& k);

struct PosedObservation {
  CameraPose pose;
  CameraIntrinsics intrinsics;
  Vec2 pixel;
};

// Homogeneous DLT triangulation solved by SVD on normalized image coordinates.
// Requires positive depth in at least half of the views.
Vec3 Triangulate(std::span<const PosedObservation> observations);

double ReprojectionError(const Vec3& point, const CameraPose& pose,
                         const CameraIntrinsics& k, const Vec2& observed);

// F with x_b^T F x_a = 0 for pixels of image a and b.
Mat3 FundamentalMatrix(const CameraPose& pose_a, const CameraIntrinsics& ka,
                       const CameraPose& pose_b, const CameraIntrinsics& kb);

// Square root of the Sampson error of (pa, pb) under the induced fundamental
// matrix, in pixels.
double EpipolarDistance(const Vec2& pa, const Vec2& pb, const CameraPose& pose_a,
                        const CameraPose& pose_b, const CameraIntrinsics& ka,
                        const CameraIntrinsics& kb);

Mat3 Skew(const Vec3& v);
Mat3 ExpSO3(const Vec3& omega);
// Angle of a rotation matrix in radians.
double RotationAngle(const Mat3& rotation);

// x' = scale * R * x + t
struct Similarity3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 Apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  CameraPose Apply(const CameraPose& pose) const;
  Similarity3 Inverse() const;
};

}  // namespace densesfm
