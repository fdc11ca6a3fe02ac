#include "densesfm/geometry.h"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace densesfm {

namespace {

Eigen::Quaterniond Canonical(Eigen::Quaterniond q) {
  // Already-unit quaternions are kept bit-exact for serialization round trips.
  if (std::abs(q.squaredNorm() - 1.0) > 1e-14) q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

}  // namespace

Mat3 CameraIntrinsics::Matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Mat3 CameraIntrinsics::InverseMatrix() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    Fail(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    Fail(ErrorCode::kInvalidArgument, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    Fail(ErrorCode::kInvalidArgument, "principal point outside the image");
  }
}

CameraPose::CameraPose()
    : quaternion_(Eigen::Quaterniond::Identity()),
      rotation_(Mat3::Identity()),
      translation_(Vec3::Zero()) {}

CameraPose::CameraPose(const Eigen::Quaterniond& rotation, const Vec3& translation)
    : translation_(translation) {
  SetRotation(rotation);
}

CameraPose::CameraPose(const Mat3& rotation, const Vec3& translation)
    : translation_(translation) {
  SetRotation(Eigen::Quaterniond(rotation));
}

void CameraPose::SetRotation(const Eigen::Quaterniond& rotation) {
  quaternion_ = Canonical(rotation);
  rotation_ = quaternion_.toRotationMatrix();
}

Vec3 CameraPose::Center() const { return -(rotation_.transpose() * translation_); }

double CameraPose::Depth(const Vec3& world) const {
  return rotation_.row(2).dot(world) + translation_.z();
}

std::optional<Vec2> TryProject(const Vec3& point, const CameraPose& pose,
                               const CameraIntrinsics& k) {
  const Vec3 x = pose.ToCamera(point);
  if (!(x.z() > kMinDepth)) return std::nullopt;
  return Vec2(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
}

Vec2 Project(const Vec3& point, const CameraPose& pose, const CameraIntrinsics& k) {
  auto pixel = TryProject(point, pose, k);
  if (!pixel) Fail(ErrorCode::kBehindCamera, "point does not lie in front of the camera");
  return *pixel;
}

bool InImage(const Vec2& pixel, const CameraIntrinsics& k) {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= k.width - 1.0 &&
         pixel.y() <= k.height - 1.0;
}

Vec3 PixelRay(const Vec2& pixel, const CameraPose& pose, const CameraIntrinsics& k) {
  const Vec3 cam((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return (pose.rotation().transpose() * cam).normalized();
}

Vec3 Triangulate(std::span<const PosedObservation> observations) {
  const int n = static_cast<int>(observations.size());
  if (n < 2) Fail(ErrorCode::kDegenerateGeometry, "triangulation needs two views");

  const Vec3 first_center = observations[0].pose.Center();
  double scale = first_center.norm();
  double spread = 0.0;
  for (const auto& obs : observations) {
    const Vec3 c = obs.pose.Center();
    scale = std::max(scale, c.norm());
    spread = std::max(spread, (c - first_center).norm());
  }
  if (spread <= 1e-12 * std::max(1.0, scale)) {
    Fail(ErrorCode::kDegenerateGeometry, "coincident camera centers");
  }

  Eigen::MatrixXd a(2 * n, 4);
  for (int i = 0; i < n; ++i) {
    const auto& obs = observations[i];
    const auto& k = obs.intrinsics;
    const double x = (obs.pixel.x() - k.cx) / k.fx;
    const double y = (obs.pixel.y() - k.cy) / k.fy;
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = obs.pose.rotation();
    p.col(3) = obs.pose.translation();
    a.row(2 * i) = x * p.row(2) - p.row(0);
    a.row(2 * i + 1) = y * p.row(2) - p.row(1);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(2) <= 1e-12 * sv(0)) {
    Fail(ErrorCode::kDegenerateGeometry, "rank-deficient triangulation system");
  }
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) <= 1e-12 * h.head<3>().norm()) {
    Fail(ErrorCode::kDegenerateGeometry, "triangulated point at infinity");
  }
  const Vec3 point = h.head<3>() / h(3);

  int in_front = 0;
  for (const auto& obs : observations) {
    if (obs.pose.Depth(point) > kMinDepth) ++in_front;
  }
  if (2 * in_front < n) {
    Fail(ErrorCode::kCheiralityFailure, "point behind the majority of views");
  }
  return point;
}

double ReprojectionError(const Vec3& point, const CameraPose& pose,
                         const CameraIntrinsics& k, const Vec2& observed) {
  return (Project(point, pose, k) - observed).norm();
}

Mat3 FundamentalMatrix(const CameraPose& pose_a, const CameraIntrinsics& ka,
                       const CameraPose& pose_b, const CameraIntrinsics& kb) {
  const Mat3 r = pose_b.rotation() * pose_a.rotation().transpose();
  const Vec3 t = pose_b.translation() - r * pose_a.translation();
  const double scale = std::max({1.0, pose_a.translation().norm(), pose_b.translation().norm()});
  if (t.norm() <= 1e-12 * scale) {
    Fail(ErrorCode::kDegenerateGeometry, "zero baseline between cameras");
  }
  return kb.InverseMatrix().transpose() * Skew(t) * r * ka.InverseMatrix();
}

double EpipolarDistance(const Vec2& pa, const Vec2& pb, const CameraPose& pose_a,
                        const CameraPose& pose_b, const CameraIntrinsics& ka,
                        const CameraIntrinsics& kb) {
  const Mat3 f = FundamentalMatrix(pose_a, ka, pose_b, kb);
  const Vec3 xa = pa.homogeneous();
  const Vec3 xb = pb.homogeneous();
  const Vec3 line_b = f * xa;
  const Vec3 line_a = f.transpose() * xb;
  const double num = xb.dot(line_b);
  const double den = line_b.head<2>().squaredNorm() + line_a.head<2>().squaredNorm();
  if (den <= 0.0) return 0.0;
  return std::sqrt(num * num / den);
}

Mat3 Skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 ExpSO3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Mat3::Identity() + Skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

double RotationAngle(const Mat3& rotation) {
  const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
  // acos loses precision near zero; recover the small-angle case from the
  // skew part.
  const Vec3 w(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

CameraPose Similarity3::Apply(const CameraPose& pose) const {
  const Mat3 r = pose.rotation() * rotation.transpose();
  const Vec3 t = scale * pose.translation() - r * translation;
  return CameraPose(r, t);
}

Similarity3 Similarity3::Inverse() const {
  Similarity3 inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation) / scale;
  return inv;
}

}  // namespace densesfm
