#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "densesfm/config.h"
#include "densesfm/matchio.h"
#include "densesfm/refine.h"
#include "densesfm/scene.h"
#include "densesfm/splatvis.h"

namespace densesfm {

struct SynthConfig {
  std::uint64_t seed = 7;
  // Cameras sit on a horizontal arc around the origin, alternating above and
  // below it by camera_height, all looking at the origin.
  int cameras = 8;
  double ring_radius = 6.0;
  double arc_degrees = 90.0;
  double camera_height = 0.5;
  double focal = 360.0;
  int width = 400;
  int height = 300;
  // Each point is the center of a textured disk, uniform in [-volume, volume]^3.
  int points = 60;
  double volume = 2.5;
  double disk_radius = 0.15;
  double disk_tilt_degrees = 15.0;
  // When set, a point is resampled while its disk's image footprint comes
  // within disk_margin_px of another disk's in any camera, so no disk hides
  // another.
  bool separate_disks = true;
  double disk_margin_px = 4.0;
  // Feature texture: per channel, a sum of 3D sinusoids.
  int texture_channels = 8;
  int texture_waves = 3;
  double texture_freq_min = 20.0;
  double texture_freq_max = 45.0;
  // Dense matcher.
  double match_noise = 0.5;
  double outlier_rate = 0.05;
  double match_radius = 5.0;
  double match_jitter = 1.0;
  double match_sharpness = 1.0;
  // Perturbation of the input poses; camera 0 stays exact.
  double pose_rotation_degrees = 0.5;
  double pose_translation_fraction = 0.01;
  // Occluder Gaussians, uniform in [-occluder_volume, occluder_volume]^3.
  int occluders = 0;
  double occluder_volume = 2.0;
  double occluder_alpha_min = 0.3;
  double occluder_alpha_max = 0.95;
  double occluder_scale_min = 0.05;
  double occluder_scale_max = 0.2;
  double gt_cloud_spacing = 0.01;

  // Throws kConfigInvalid.
  void Validate() const;
  KeyValues ToKeyValues() const;
  static SynthConfig FromKeyValues(const KeyValues& kv);
};

struct TextureWave {
  Vec3 frequency;
  double phase = 0.0;
  double amplitude = 1.0;
};

struct Texture {
  std::vector<std::vector<TextureWave>> channels;
  // Rays that miss every disk sample a backdrop sphere at this radius with
  // frequencies scaled by background_scale.
  double background_radius = 40.0;
  double background_scale = 0.05;

  void Eval(const Vec3& x, bool background, float* out) const;
};

struct Disk {
  PointId id = 0;
  Vec3 center;
  Vec3 normal;
  double radius = 0.0;
};

// Per-pixel first disk hit for one camera: disk index (-1 for none) and the
// distance along the unit pixel ray.
struct DepthRender {
  int width = 0;
  int height = 0;
  std::vector<int> disk;
  std::vector<double> along;
};

struct SynthScene {
  SynthConfig config;
  // Exact cameras, disk centers as points, tracks over every camera with the
  // point in front and inside the image, observed at its exact projection.
  SceneModel gt;
  std::map<ImageId, CameraPose> perturbed;
  std::vector<Disk> disks;
  std::vector<Gaussian3D> occluders;
  Texture texture;
  // Per camera, the points that pass the splat visibility test against the
  // occluders at the exact poses.
  std::map<ImageId, std::set<PointId>> visible;

  // Perturbed cameras and no points.
  SceneModel InputModel() const;
  GaussianSet OccluderSet() const;
  // First disk whose plane hit lies within slack * radius of its center.
  std::optional<Vec3> SurfacePoint(const CameraPose& pose, const CameraIntrinsics& k,
                                   const Vec2& pixel, double slack = 1.0) const;
  // Disk surfaces sampled on a square grid of the configured spacing.
  std::vector<Vec3> GtCloud() const;
  DepthRender Render(ImageId image) const;
  FeatureImage RenderFeatures(ImageId image) const;
};

SynthScene GenerateScene(const SynthConfig& config);

struct DensePair {
  MatchField forward;   // a -> b, carries the outliers
  MatchField backward;  // b -> a
  // Pixels of a whose forward target was replaced by a random one.
  std::set<std::pair<int, int>> outliers;
};

// Fields induced by the exact geometry around each point visible in both
// images: pixels within match_radius of the point's projection, mapped through
// the point's disk plane, with Gaussian noise of std sigma. Confidence peaks
// at the projection shifted by a per-(pair, point) jitter so that different
// pairs sample different keypoints. Forward outliers are redrawn until their
// forward-backward cycle misses by more than 10 px.
DensePair SynthDenseMatcher(const SynthScene& scene, ImageId a, ImageId b, double sigma,
                            double outlier_rate, std::uint64_t seed);

// Bundle layout: gt/ and input/ (COLMAP text), occluders.ply, synth.cfg,
// texture.txt, gt_cloud.ply, features/<id>.fpt, matches/<a>_<b>.dmf for every
// ordered pair and matches/<a>_<b>.outliers for a < b.
void WriteSceneBundle(const std::filesystem::path& dir, const SynthScene& scene, int threads = 1);

}  // namespace densesfm
