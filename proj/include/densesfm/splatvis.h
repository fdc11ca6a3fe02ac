#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "densesfm/scene.h"

namespace densesfm {

enum class GaussianKind : std::uint8_t { kSfmPoint = 0, kOccluder = 1 };

struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  // Standard deviations along the rotated axes, world units.
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  GaussianKind kind = GaussianKind::kOccluder;
  PointId point_id = 0;  // sfm points only

  // Scale of the Gaussian along a unit direction, sqrt(u^T Sigma u).
  double StdDevAlong(const Vec3& unit) const;
};

class GaussianSet {
 public:
  void AddOccluder(const Gaussian3D& g);
  void AddSfmPoint(PointId id, const Vec3& mean, double scale);

  const std::vector<Gaussian3D>& gaussians() const { return gaussians_; }
  std::size_t IndexOf(PointId id) const;
  bool Contains(PointId id) const { return sfm_index_.count(id) > 0; }
  std::size_t size() const { return gaussians_.size(); }

 private:
  std::vector<Gaussian3D> gaussians_;
  std::map<PointId, std::size_t> sfm_index_;
};

// One isotropic SfM-point Gaussian per 3D point: opacity 1, identity rotation,
// scale D_max / fx with D_max the largest positive depth over its track's
// views (fx of that view). Points without a positive depth raise
// kCheiralityFailure.
GaussianSet InitGaussians(const SceneModel& model);

struct VisibilityOptions {
  double eps_v = 0.5;
  // Footprint radius in projected standard deviations.
  double footprint_sigmas = 2.0;
  // Per-ray alphas below this are skipped, as in 3DGS rasterization.
  double min_alpha = 1.0 / 255.0;
  // Whether other SfM-point Gaussians count as occluders.
  bool sfm_points_occlude = false;
};

struct VisibilityResult {
  bool visible = false;
  double score = 0.0;
};

// Effective opacity of a Gaussian on the ray origin + s * dir (dir unit):
// alpha * exp(-d^2 / (2 sigma_perp^2)) with d the closest-approach distance.
// `along` receives the distance of the mean along the ray.
double RayAlpha(const Gaussian3D& g, const Vec3& origin, const Vec3& dir, double* along);

// Integer pixels within the footprint radius around the target's projection,
// clipped to the image; the nearest pixel if the disc contains none.
std::vector<Eigen::Vector2i> FootprintPixels(const Gaussian3D& target, const CameraPose& pose,
                                             const CameraIntrinsics& k, double sigmas);

// Per-camera screen-space index over potential occluders. Immutable after
// construction and safe to query concurrently.
class SplatVisibility {
 public:
  SplatVisibility(const GaussianSet& set, const CameraPose& pose, const CameraIntrinsics& k,
                  const VisibilityOptions& options);

  // Throws kBehindCamera / kOutOfImage when the target cannot be projected.
  VisibilityResult Query(PointId point_id) const;

 private:
  bool Considered(std::size_t index) const;
  double RayScore(std::size_t target, const Eigen::Vector2i& pixel) const;

  static constexpr int kTile = 16;

  const GaussianSet& set_;
  CameraPose pose_;
  CameraIntrinsics k_;
  VisibilityOptions options_;
  Vec3 center_;
  int tiles_x_ = 0;
  int tiles_y_ = 0;
  std::vector<std::vector<std::size_t>> tiles_;
  std::vector<std::size_t> global_;
};

// Single-shot query (builds a throwaway index).
VisibilityResult CompositeVisibility(const GaussianSet& set, PointId point_id,
                                     const CameraPose& pose, const CameraIntrinsics& k,
                                     const VisibilityOptions& options);

// Binary little-endian PLY: x y z scale_0..2 rot_0..3 (w x y z) opacity as
// float, kind as uchar. Scales and opacity are stored linearly.
void WriteGaussiansPly(const std::filesystem::path& path, const std::vector<Gaussian3D>& gaussians);
std::vector<Gaussian3D> ReadGaussiansPly(const std::filesystem::path& path);

}  // namespace densesfm
