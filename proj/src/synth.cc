#include "densesfm/synth.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "densesfm/colmap_io.h"
#include "densesfm/feature_io.h"
#include "densesfm/io_util.h"
#include "densesfm/parallel.h"
#include "densesfm/ply_io.h"
#include "densesfm/random.h"

namespace densesfm {

namespace {

enum Stream : std::uint64_t {
  kCameraStream = 1,
  kPointStream = 2,
  kTextureStream = 3,
  kOccluderStream = 4,
  kJitterStream = 5,
  kNoiseStream = 6,
  kOutlierStream = 7,
};

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

std::uint64_t PairKey(ImageId a, ImageId b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

Vec3 RandomUnit(Rng& rng) {
  for (;;) {
    const Vec3 v(rng.Normal(), rng.Normal(), rng.Normal());
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

// Along-ray distance to the disk's plane, or +inf if parallel / behind.
double PlaneHit(const Disk& d, const Vec3& origin, const Vec3& dir) {
  const double denom = d.normal.dot(dir);
  if (std::abs(denom) < 1e-12) return kNoHit;
  const double t = d.normal.dot(d.center - origin) / denom;
  return t > 0.0 ? t : kNoHit;
}

CameraPose LookAt(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  const Vec3 x = Vec3::UnitY().cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return CameraPose(r, -(r * center));
}

float Quantize(double v) { return static_cast<float>(v); }

}  // namespace

void SynthConfig::Validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) Fail(ErrorCode::kConfigInvalid, std::string("synth: ") + what);
  };
  require(cameras >= 2, "need at least two cameras");
  require(points >= 1, "need at least one point");
  require(ring_radius > volume * std::sqrt(3.0) + disk_radius, "cameras must sit outside the volume");
  require(arc_degrees >= 0.0 && arc_degrees < 360.0, "arc must be in [0, 360)");
  require(focal > 0.0 && width > 1 && height > 1, "bad intrinsics");
  require(volume > 0.0 && disk_radius > 0.0, "volume and disk radius must be > 0");
  require(texture_channels >= 1 && texture_waves >= 1, "texture needs channels and waves");
  require(texture_freq_min > 0.0 && texture_freq_max >= texture_freq_min, "bad texture frequencies");
  require(match_noise >= 0.0, "match noise must be >= 0");
  require(outlier_rate >= 0.0 && outlier_rate < 1.0, "outlier rate must be in [0, 1)");
  require(match_radius >= 1.0 && match_sharpness > 0.0 && match_jitter >= 0.0, "bad matcher shape");
  require(pose_rotation_degrees >= 0.0 && pose_translation_fraction >= 0.0, "bad perturbation");
  require(occluders >= 0 && occluder_volume > 0.0, "bad occluder placement");
  require(occluder_alpha_min > 0.0 && occluder_alpha_max <= 1.0 &&
              occluder_alpha_min <= occluder_alpha_max,
          "occluder alpha range must lie in (0, 1]");
  require(occluder_scale_min > 0.0 && occluder_scale_max >= occluder_scale_min, "bad occluder scale");
  require(gt_cloud_spacing > 0.0, "gt cloud spacing must be > 0");
}

KeyValues SynthConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("seed", std::to_string(seed));
  kv.Set("cameras", cameras);
  kv.Set("ring_radius", ring_radius);
  kv.Set("arc_degrees", arc_degrees);
  kv.Set("camera_height", camera_height);
  kv.Set("focal", focal);
  kv.Set("width", width);
  kv.Set("height", height);
  kv.Set("points", points);
  kv.Set("volume", volume);
  kv.Set("disk_radius", disk_radius);
  kv.Set("disk_tilt_degrees", disk_tilt_degrees);
  kv.Set("separate_disks", separate_disks);
  kv.Set("disk_margin_px", disk_margin_px);
  kv.Set("texture_channels", texture_channels);
  kv.Set("texture_waves", texture_waves);
  kv.Set("texture_freq_min", texture_freq_min);
  kv.Set("texture_freq_max", texture_freq_max);
  kv.Set("match_noise", match_noise);
  kv.Set("outlier_rate", outlier_rate);
  kv.Set("match_radius", match_radius);
  kv.Set("match_jitter", match_jitter);
  kv.Set("match_sharpness", match_sharpness);
  kv.Set("pose_rotation_degrees", pose_rotation_degrees);
  kv.Set("pose_translation_fraction", pose_translation_fraction);
  kv.Set("occluders", occluders);
  kv.Set("occluder_volume", occluder_volume);
  kv.Set("occluder_alpha_min", occluder_alpha_min);
  kv.Set("occluder_alpha_max", occluder_alpha_max);
  kv.Set("occluder_scale_min", occluder_scale_min);
  kv.Set("occluder_scale_max", occluder_scale_max);
  kv.Set("gt_cloud_spacing", gt_cloud_spacing);
  return kv;
}

SynthConfig SynthConfig::FromKeyValues(const KeyValues& kv) {
  const SynthConfig d;
  const KeyValues defaults = d.ToKeyValues();
  std::set<std::string> known;
  for (const auto& [k, v] : defaults.values()) known.insert(k);
  kv.RequireKnown(known);
  SynthConfig c;
  c.seed = kv.GetU64("seed", d.seed);
  c.cameras = static_cast<int>(kv.GetInt("cameras", d.cameras));
  c.ring_radius = kv.GetDouble("ring_radius", d.ring_radius);
  c.arc_degrees = kv.GetDouble("arc_degrees", d.arc_degrees);
  c.camera_height = kv.GetDouble("camera_height", d.camera_height);
  c.focal = kv.GetDouble("focal", d.focal);
  c.width = static_cast<int>(kv.GetInt("width", d.width));
  c.height = static_cast<int>(kv.GetInt("height", d.height));
  c.points = static_cast<int>(kv.GetInt("points", d.points));
  c.volume = kv.GetDouble("volume", d.volume);
  c.disk_radius = kv.GetDouble("disk_radius", d.disk_radius);
  c.disk_tilt_degrees = kv.GetDouble("disk_tilt_degrees", d.disk_tilt_degrees);
  c.separate_disks = kv.GetBool("separate_disks", d.separate_disks);
  c.disk_margin_px = kv.GetDouble("disk_margin_px", d.disk_margin_px);
  c.texture_channels = static_cast<int>(kv.GetInt("texture_channels", d.texture_channels));
  c.texture_waves = static_cast<int>(kv.GetInt("texture_waves", d.texture_waves));
  c.texture_freq_min = kv.GetDouble("texture_freq_min", d.texture_freq_min);
  c.texture_freq_max = kv.GetDouble("texture_freq_max", d.texture_freq_max);
  c.match_noise = kv.GetDouble("match_noise", d.match_noise);
  c.outlier_rate = kv.GetDouble("outlier_rate", d.outlier_rate);
  c.match_radius = kv.GetDouble("match_radius", d.match_radius);
  c.match_jitter = kv.GetDouble("match_jitter", d.match_jitter);
  c.match_sharpness = kv.GetDouble("match_sharpness", d.match_sharpness);
  c.pose_rotation_degrees = kv.GetDouble("pose_rotation_degrees", d.pose_rotation_degrees);
  c.pose_translation_fraction = kv.GetDouble("pose_translation_fraction", d.pose_translation_fraction);
  c.occluders = static_cast<int>(kv.GetInt("occluders", d.occluders));
  c.occluder_volume = kv.GetDouble("occluder_volume", d.occluder_volume);
  c.occluder_alpha_min = kv.GetDouble("occluder_alpha_min", d.occluder_alpha_min);
  c.occluder_alpha_max = kv.GetDouble("occluder_alpha_max", d.occluder_alpha_max);
  c.occluder_scale_min = kv.GetDouble("occluder_scale_min", d.occluder_scale_min);
  c.occluder_scale_max = kv.GetDouble("occluder_scale_max", d.occluder_scale_max);
  c.gt_cloud_spacing = kv.GetDouble("gt_cloud_spacing", d.gt_cloud_spacing);
  c.Validate();
  return c;
}

void Texture::Eval(const Vec3& x, bool background, float* out) const {
  const double s = background ? background_scale : 1.0;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    double v = 0.0;
    for (const auto& w : channels[c]) v += w.amplitude * std::sin(s * w.frequency.dot(x) + w.phase);
    out[c] = static_cast<float>(v);
  }
}

SceneModel SynthScene::InputModel() const {
  SceneModel m;
  for (const auto& [image, view] : gt.cameras) {
    CameraView v = view;
    v.pose = perturbed.at(image);
    m.cameras.emplace(image, v);
  }
  return m;
}

GaussianSet SynthScene::OccluderSet() const {
  GaussianSet set;
  for (const auto& g : occluders) set.AddOccluder(g);
  return set;
}

std::optional<Vec3> SynthScene::SurfacePoint(const CameraPose& pose, const CameraIntrinsics& k,
                                             const Vec2& pixel, double slack) const {
  const Vec3 origin = pose.Center();
  const Vec3 dir = PixelRay(pixel, pose, k);
  double best = kNoHit;
  for (const auto& d : disks) {
    const double t = PlaneHit(d, origin, dir);
    if (t < best && (origin + t * dir - d.center).norm() <= slack * d.radius) best = t;
  }
  if (best == kNoHit) return std::nullopt;
  return origin + best * dir;
}

std::vector<Vec3> SynthScene::GtCloud() const {
  std::vector<Vec3> cloud;
  const double s = config.gt_cloud_spacing;
  for (const auto& d : disks) {
    const Vec3 u = d.normal.unitOrthogonal();
    const Vec3 v = d.normal.cross(u);
    const int n = static_cast<int>(std::floor(d.radius / s));
    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        if ((i * i + j * j) * s * s <= d.radius * d.radius) cloud.push_back(d.center + s * (i * u + j * v));
      }
    }
  }
  return cloud;
}

DepthRender SynthScene::Render(ImageId image) const {
  const CameraView& cam = gt.Camera(image);
  const auto& k = cam.intrinsics;
  DepthRender r;
  r.width = k.width;
  r.height = k.height;
  r.disk.assign(static_cast<std::size_t>(k.width) * k.height, -1);
  r.along.assign(r.disk.size(), kNoHit);
  const Vec3 origin = cam.pose.Center();
  for (std::size_t i = 0; i < disks.size(); ++i) {
    const Disk& d = disks[i];
    const Vec3 c = cam.pose.ToCamera(d.center);
    int x0 = 0, x1 = k.width - 1, y0 = 0, y1 = k.height - 1;
    if (c.z() - d.radius > kMinDepth) {
      const double reach = std::max(k.fx, k.fy) * d.radius / (c.z() - d.radius) + 2.0;
      const double u = k.fx * c.x() / c.z() + k.cx;
      const double v = k.fy * c.y() / c.z() + k.cy;
      x0 = std::max(x0, static_cast<int>(std::floor(u - reach)));
      x1 = std::min(x1, static_cast<int>(std::ceil(u + reach)));
      y0 = std::max(y0, static_cast<int>(std::floor(v - reach)));
      y1 = std::min(y1, static_cast<int>(std::ceil(v + reach)));
    } else if (c.z() + d.radius <= 0.0) {
      continue;
    }
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec3 dir = PixelRay(Vec2(x, y), cam.pose, k);
        const double t = PlaneHit(d, origin, dir);
        const std::size_t idx = static_cast<std::size_t>(y) * k.width + x;
        if (t < r.along[idx] && (origin + t * dir - d.center).norm() <= d.radius) {
          r.along[idx] = t;
          r.disk[idx] = static_cast<int>(i);
        }
      }
    }
  }
  return r;
}

FeatureImage SynthScene::RenderFeatures(ImageId image) const {
  const CameraView& cam = gt.Camera(image);
  const auto& k = cam.intrinsics;
  const DepthRender depth = Render(image);
  FeatureImage out(k.width, k.height, static_cast<int>(texture.channels.size()));
  const Vec3 origin = cam.pose.Center();
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 dir = PixelRay(Vec2(x, y), cam.pose, k);
      const double t = depth.along[static_cast<std::size_t>(y) * k.width + x];
      if (t < kNoHit) {
        texture.Eval(origin + t * dir, false, out.At(x, y));
      } else {
        const double b = origin.dot(dir);
        const double rr = texture.background_radius;
        const double tb = -b + std::sqrt(b * b - origin.squaredNorm() + rr * rr);
        texture.Eval(origin + tb * dir, true, out.At(x, y));
      }
    }
  }
  return out;
}

namespace {

// Footprints are bounded by circles of radius f * r / depth.
bool Separated(const SynthScene& scene, const Disk& disk, double margin) {
  for (const auto& [image, view] : scene.gt.cameras) {
    const double da = view.pose.Depth(disk.center);
    if (da <= disk.radius) return false;
    const Vec2 pa = Project(disk.center, view.pose, view.intrinsics);
    const double ra = view.intrinsics.fx * disk.radius / (da - disk.radius);
    for (const auto& other : scene.disks) {
      const double db = view.pose.Depth(other.center);
      if (db <= other.radius) continue;
      const double rb = view.intrinsics.fx * other.radius / (db - other.radius);
      if ((Project(other.center, view.pose, view.intrinsics) - pa).norm() < ra + rb + margin) return false;
    }
  }
  return true;
}

}  // namespace

SynthScene GenerateScene(const SynthConfig& config) {
  config.Validate();
  SynthScene scene;
  scene.config = config;

  CameraIntrinsics k;
  k.fx = k.fy = config.focal;
  k.cx = 0.5 * (config.width - 1);
  k.cy = 0.5 * (config.height - 1);
  k.width = config.width;
  k.height = config.height;

  for (int i = 0; i < config.cameras; ++i) {
    const ImageId id = static_cast<ImageId>(i + 1);
    const double frac = config.cameras == 1 ? 0.5 : static_cast<double>(i) / (config.cameras - 1);
    const double theta = (frac - 0.5) * config.arc_degrees * kDeg;
    const double h = (i % 2 == 0 ? -1.0 : 1.0) * config.camera_height;
    const Vec3 center(config.ring_radius * std::sin(theta), h, -config.ring_radius * std::cos(theta));
    CameraView view{LookAt(center, Vec3::Zero()), k, std::to_string(id) + ".png"};
    scene.gt.cameras.emplace(id, view);

    CameraPose p = view.pose;
    if (i > 0) {
      Rng rng = Rng::Stream(config.seed, kCameraStream, id);
      const Vec3 axis = RandomUnit(rng);
      const Vec3 shift = RandomUnit(rng);
      const Mat3 r = ExpSO3(axis * config.pose_rotation_degrees * kDeg) * p.rotation();
      const Vec3 c = center + config.pose_translation_fraction * center.norm() * shift;
      p = CameraPose(r, -(r * c));
    }
    scene.perturbed.emplace(id, p);
  }

  const double tilt = std::tan(config.disk_tilt_degrees * kDeg);
  for (int j = 0; j < config.points; ++j) {
    const PointId id = static_cast<PointId>(j + 1);
    Track track;
    track.point_id = id;
    Vec3 x;
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng = Rng::Stream(config.seed, kPointStream, (id << 20) | attempt);
      x = Vec3(rng.Uniform(-1.0, 1.0), rng.Uniform(-1.0, 1.0), rng.Uniform(-1.0, 1.0)) * config.volume;
      Disk d;
      d.id = id;
      d.center = x;
      d.normal = (Vec3(0.0, 0.0, -1.0) + tilt * RandomUnit(rng)).normalized();
      d.radius = config.disk_radius;
      track.observations.clear();
      for (const auto& [image, view] : scene.gt.cameras) {
        const auto px = TryProject(x, view.pose, view.intrinsics);
        if (px && InImage(*px, view.intrinsics)) {
          track.observations.push_back({image, *px, Provenance::kMatched});
        }
      }
      if (track.observations.size() >= 2 &&
          (!config.separate_disks || Separated(scene, d, config.disk_margin_px))) {
        scene.disks.push_back(d);
        break;
      }
      if (attempt > 100000) Fail(ErrorCode::kConfigInvalid, "synth: cannot place point " + std::to_string(id));
    }
    scene.gt.points.emplace(id, x);
    scene.gt.tracks.emplace(id, std::move(track));
  }

  {
    Rng rng = Rng::Stream(config.seed, kTextureStream);
    scene.texture.channels.resize(config.texture_channels);
    const double amplitude = 1.0 / std::sqrt(static_cast<double>(config.texture_waves));
    for (auto& channel : scene.texture.channels) {
      for (int w = 0; w < config.texture_waves; ++w) {
        TextureWave wave;
        wave.frequency = RandomUnit(rng) * rng.Uniform(config.texture_freq_min, config.texture_freq_max);
        wave.phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);
        wave.amplitude = amplitude;
        channel.push_back(wave);
      }
    }
  }

  for (int i = 0; i < config.occluders; ++i) {
    Rng rng = Rng::Stream(config.seed, kOccluderStream, static_cast<std::uint64_t>(i));
    const double v = config.occluder_volume;
    Gaussian3D g;
    // Stored at float precision so the PLY copy reads back identically.
    g.mean = Vec3(Quantize(rng.Uniform(-v, v)), Quantize(rng.Uniform(-v, v)), Quantize(rng.Uniform(-v, v)));
    g.scale = Vec3(Quantize(rng.Uniform(config.occluder_scale_min, config.occluder_scale_max)),
                   Quantize(rng.Uniform(config.occluder_scale_min, config.occluder_scale_max)),
                   Quantize(rng.Uniform(config.occluder_scale_min, config.occluder_scale_max)));
    Eigen::Quaterniond q(rng.Normal(), rng.Normal(), rng.Normal(), rng.Normal());
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    g.rotation = Eigen::Quaterniond(Quantize(q.w()), Quantize(q.x()), Quantize(q.y()), Quantize(q.z()));
    g.opacity = Quantize(rng.Uniform(config.occluder_alpha_min, config.occluder_alpha_max));
    g.kind = GaussianKind::kOccluder;
    scene.occluders.push_back(g);
  }

  if (scene.occluders.empty()) {
    for (const auto& [id, track] : scene.gt.tracks) {
      for (const auto& obs : track.observations) scene.visible[obs.image].insert(id);
    }
  } else {
    GaussianSet set = InitGaussians(scene.gt);
    for (const auto& g : scene.occluders) set.AddOccluder(g);
    for (const auto& [image, view] : scene.gt.cameras) {
      const SplatVisibility vis(set, view.pose, view.intrinsics, VisibilityOptions{});
      auto& seen = scene.visible[image];
      for (const auto& [id, track] : scene.gt.tracks) {
        if (track.HasImage(image) && vis.Query(id).visible) seen.insert(id);
      }
    }
  }
  scene.gt.Validate();
  return scene;
}

namespace {

struct FieldCell {
  Vec2 target;
  double conf = 0.0;
  double along = kNoHit;
  bool defined = false;
  // Support cells: distance to the owning footprint relative to its reach.
  double reach = std::numeric_limits<double>::infinity();
};

// Pixel of src -> dst through the disk plane.
std::optional<Vec2> PlaneMap(const Disk& disk, const CameraView& src, const CameraView& dst,
                             const Vec2& pixel) {
  const Vec3 origin = src.pose.Center();
  const Vec3 dir = PixelRay(pixel, src.pose, src.intrinsics);
  const double t = PlaneHit(disk, origin, dir);
  if (t == kNoHit) return std::nullopt;
  return TryProject(origin + t * dir, dst.pose, dst.intrinsics);
}

// Geometric field src -> dst before noise and outliers.
std::vector<FieldCell> GeometricField(const SynthScene& scene, ImageId src, ImageId dst,
                                      const DepthRender& src_depth, const DepthRender& dst_depth,
                                      std::uint64_t seed) {
  const auto& cs = scene.gt.Camera(src);
  const auto& cd = scene.gt.Camera(dst);
  const auto& ks = cs.intrinsics;
  const auto& kd = cd.intrinsics;
  const auto& cfg = scene.config;
  std::vector<FieldCell> cells(static_cast<std::size_t>(ks.width) * ks.height);
  const Vec3 origin_s = cs.pose.Center();
  const auto& vis_s = scene.visible.at(src);
  const auto& vis_d = scene.visible.at(dst);
  const double tol = 1e-6 * cfg.ring_radius;

  for (std::size_t di = 0; di < scene.disks.size(); ++di) {
    const Disk& disk = scene.disks[di];
    if (!vis_s.count(disk.id) || !vis_d.count(disk.id)) continue;
    const Vec2 proj = Project(disk.center, cs.pose, ks);
    Rng rng = Rng::Stream(seed, kJitterStream, PairKey(src, dst) ^ (disk.id << 40));
    const Vec2 peak = proj + Vec2(rng.Uniform(-1.0, 1.0), rng.Uniform(-1.0, 1.0)) * cfg.match_jitter;
    const double r = cfg.match_radius;
    const int x0 = std::max(0, static_cast<int>(std::ceil(proj.x() - r)));
    const int x1 = std::min(ks.width - 1, static_cast<int>(std::floor(proj.x() + r)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(proj.y() - r)));
    const int y1 = std::min(ks.height - 1, static_cast<int>(std::floor(proj.y() + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if ((Vec2(x, y) - proj).squaredNorm() > r * r) continue;
        const std::size_t idx = static_cast<std::size_t>(y) * ks.width + x;
        const Vec3 dir = PixelRay(Vec2(x, y), cs.pose, ks);
        const double t = PlaneHit(disk, origin_s, dir);
        if (t == kNoHit || t > src_depth.along[idx] + tol || t >= cells[idx].along) continue;
        const Vec3 surface = origin_s + t * dir;
        if ((surface - disk.center).norm() > disk.radius) continue;
        const auto target = TryProject(surface, cd.pose, kd);
        if (!target || !InImage(*target, kd)) continue;
        // The nearest dst pixel must see this disk first.
        const int tx = static_cast<int>(std::lround(target->x()));
        const int ty = static_cast<int>(std::lround(target->y()));
        if (dst_depth.disk[static_cast<std::size_t>(ty) * kd.width + tx] != static_cast<int>(di)) continue;
        const double d2 = (Vec2(x, y) - peak).squaredNorm();
        cells[idx] = {*target,
                      std::exp(-0.5 * d2 / (cfg.match_sharpness * cfg.match_sharpness)), t, true};
      }
    }

    // Zero-confidence support: flow wherever the opposite field's footprint
    // can send a bilinear lookup, so that exact cycles close.
    const Vec2 proj_d = Project(disk.center, cd.pose, kd);
    double s_back = 1.0;
    if (auto ex = PlaneMap(disk, cd, cs, proj_d + Vec2(1, 0)), ey = PlaneMap(disk, cd, cs, proj_d + Vec2(0, 1));
        ex && ey) {
      s_back = std::max(s_back, std::max((*ex - proj).norm(), (*ey - proj).norm()));
    }
    const int half = static_cast<int>(std::ceil(1.5 * (r + 3.0) * s_back + 2.0));
    const int sx0 = std::max(0, static_cast<int>(std::floor(proj.x())) - half);
    const int sx1 = std::min(ks.width - 1, static_cast<int>(std::ceil(proj.x())) + half);
    const int sy0 = std::max(0, static_cast<int>(std::floor(proj.y())) - half);
    const int sy1 = std::min(ks.height - 1, static_cast<int>(std::ceil(proj.y())) + half);
    // Mapped positions on the box plus one column and row, for the local scale.
    const int gw = sx1 - sx0 + 2;
    std::vector<std::optional<Vec2>> grid(static_cast<std::size_t>(gw) * (sy1 - sy0 + 2));
    for (int y = sy0; y <= sy1 + 1; ++y) {
      for (int x = sx0; x <= sx1 + 1; ++x) grid[(y - sy0) * gw + (x - sx0)] = PlaneMap(disk, cs, cd, Vec2(x, y));
    }
    for (int y = sy0; y <= sy1; ++y) {
      for (int x = sx0; x <= sx1; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * ks.width + x;
        if (cells[idx].conf > 0.0) continue;
        const std::size_t g = static_cast<std::size_t>(y - sy0) * gw + (x - sx0);
        const auto& target = grid[g];
        const auto& tx = grid[g + 1];
        const auto& ty = grid[g + gw];
        if (!target || !tx || !ty) continue;
        const double scale = std::max((*tx - *target).norm(), (*ty - *target).norm());
        double reach = (*target - proj_d).norm() / (r + 1.5 * scale + 0.5);
        if (reach > 1.0) continue;
        // The disk this pixel actually sees wins over neighbouring rings.
        if (src_depth.disk[idx] == static_cast<int>(di)) reach -= 2.0;
        if (reach >= cells[idx].reach) continue;
        cells[idx] = {*target, 0.0, kNoHit, true, reach};
      }
    }
  }
  return cells;
}

MatchField ToField(const std::vector<FieldCell>& cells, ImageId src, ImageId dst,
                   const CameraIntrinsics& ks, const CameraIntrinsics& kd, double sigma,
                   std::uint64_t seed) {
  MatchField field(src, dst, ks.width, ks.height);
  for (int y = 0; y < ks.height; ++y) {
    for (int x = 0; x < ks.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * ks.width + x;
      const auto& c = cells[idx];
      if (!c.defined) continue;
      Rng rng = Rng::Stream(seed, kNoiseStream ^ (PairKey(src, dst) << 3), idx);
      Vec2 t = c.target + sigma * Vec2(rng.Normal(), rng.Normal());
      // Support targets may leave the image so border lookups interpolate.
      if (c.conf > 0.0) {
        t.x() = std::clamp(t.x(), 0.0, kd.width - 1.0);
        t.y() = std::clamp(t.y(), 0.0, kd.height - 1.0);
      }
      // Footprint pixels keep a positive confidence after float rounding.
      field.Set(x, y, t, c.conf > 0.0 ? std::max(c.conf, 1e-30) : 0.0);
    }
  }
  return field;
}

}  // namespace

DensePair SynthDenseMatcher(const SynthScene& scene, ImageId a, ImageId b, double sigma,
                            double outlier_rate, std::uint64_t seed) {
  const DepthRender da = scene.Render(a);
  const DepthRender db = scene.Render(b);
  const auto& ka = scene.gt.Camera(a).intrinsics;
  const auto& kb = scene.gt.Camera(b).intrinsics;
  DensePair out;
  out.forward = ToField(GeometricField(scene, a, b, da, db, seed), a, b, ka, kb, sigma, seed);
  out.backward = ToField(GeometricField(scene, b, a, db, da, seed), b, a, kb, ka, sigma, seed);
  if (outlier_rate <= 0.0) return out;

  for (int y = 0; y < ka.height; ++y) {
    for (int x = 0; x < ka.width; ++x) {
      const double conf = out.forward.Confidence(x, y);
      if (!(conf > 0.0)) continue;
      const std::size_t idx = static_cast<std::size_t>(y) * ka.width + x;
      Rng rng = Rng::Stream(seed, kOutlierStream ^ (PairKey(a, b) << 3), idx);
      if (!(rng.Uniform() < outlier_rate)) continue;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        const Vec2 t(rng.Uniform(0.0, kb.width - 1.0), rng.Uniform(0.0, kb.height - 1.0));
        out.forward.Set(x, y, t, conf);
        const auto cycle = CycleDistance(out.backward, {Vec2(x, y), out.forward.Flow(x, y), conf});
        if (!cycle || *cycle > 10.0) break;
      }
      out.outliers.insert({x, y});
    }
  }
  return out;
}

void WriteSceneBundle(const std::filesystem::path& dir, const SynthScene& scene, int threads) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "matches");
  WriteColmapText(dir / "gt", scene.gt);
  WriteColmapText(dir / "input", scene.InputModel());
  WriteGaussiansPly(dir / "occluders.ply", scene.occluders);
  scene.config.ToKeyValues().Save(dir / "synth.cfg");
  WritePointCloudPly(dir / "gt_cloud.ply", scene.GtCloud());

  {
    std::ofstream out(dir / "texture.txt");
    if (!out) Fail(ErrorCode::kIo, "cannot write texture.txt");
    out << "# channel fx fy fz phase amplitude\n";
    out << "background_radius " << FormatDouble(scene.texture.background_radius) << '\n';
    out << "background_scale " << FormatDouble(scene.texture.background_scale) << '\n';
    for (std::size_t c = 0; c < scene.texture.channels.size(); ++c) {
      for (const auto& w : scene.texture.channels[c]) {
        out << c << ' ' << FormatDouble(w.frequency.x()) << ' ' << FormatDouble(w.frequency.y())
            << ' ' << FormatDouble(w.frequency.z()) << ' ' << FormatDouble(w.phase) << ' '
            << FormatDouble(w.amplitude) << '\n';
      }
    }
  }

  std::vector<ImageId> images;
  for (const auto& [id, view] : scene.gt.cameras) images.push_back(id);
  ParallelFor(images.size(), threads, [&](std::size_t i) {
    WriteFeatureImage(dir / "features" / (std::to_string(images[i]) + ".fpt"),
                      scene.RenderFeatures(images[i]));
  });

  std::vector<std::pair<ImageId, ImageId>> pairs;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = i + 1; j < images.size(); ++j) pairs.emplace_back(images[i], images[j]);
  }
  ParallelFor(pairs.size(), threads, [&](std::size_t i) {
    const auto [a, b] = pairs[i];
    const DensePair dp = SynthDenseMatcher(scene, a, b, scene.config.match_noise,
                                           scene.config.outlier_rate, scene.config.seed);
    WriteDenseField(dir / "matches" / (PairStem(a, b) + ".dmf"), dp.forward);
    WriteDenseField(dir / "matches" / (PairStem(b, a) + ".dmf"), dp.backward);
    std::ofstream out(dir / "matches" / (PairStem(a, b) + ".outliers"));
    if (!out) Fail(ErrorCode::kIo, "cannot write outlier mask");
    for (const auto& [x, y] : dp.outliers) out << x << ' ' << y << '\n';
  });
}

}  // namespace densesfm
