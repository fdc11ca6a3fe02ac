#include "densesfm/splatvis.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include "densesfm/io_util.h"
#include "densesfm/ply_io.h"

namespace densesfm {

double Gaussian3D::StdDevAlong(const Vec3& unit) const {
  const Vec3 local = rotation.conjugate() * unit;
  return std::sqrt((scale.array().square() * local.array().square()).sum());
}

void GaussianSet::AddOccluder(const Gaussian3D& g) {
  if (!(g.scale.minCoeff() > 0.0)) Fail(ErrorCode::kInvalidArgument, "Gaussian scale must be > 0");
  if (!(g.opacity > 0.0 && g.opacity <= 1.0)) {
    Fail(ErrorCode::kInvalidArgument, "Gaussian opacity must be in (0,1]");
  }
  Gaussian3D copy = g;
  copy.kind = GaussianKind::kOccluder;
  copy.point_id = 0;
  gaussians_.push_back(copy);
}

void GaussianSet::AddSfmPoint(PointId id, const Vec3& mean, double scale) {
  if (!(scale > 0.0)) Fail(ErrorCode::kInvalidArgument, "Gaussian scale must be > 0");
  if (!sfm_index_.emplace(id, gaussians_.size()).second) {
    Fail(ErrorCode::kInvalidArgument, "point already has a Gaussian");
  }
  Gaussian3D g;
  g.mean = mean;
  g.scale = Vec3::Constant(scale);
  g.opacity = 1.0;
  g.kind = GaussianKind::kSfmPoint;
  g.point_id = id;
  gaussians_.push_back(g);
}

std::size_t GaussianSet::IndexOf(PointId id) const {
  auto it = sfm_index_.find(id);
  if (it == sfm_index_.end()) {
    Fail(ErrorCode::kInvalidArgument, "no Gaussian for point " + std::to_string(id));
  }
  return it->second;
}

GaussianSet InitGaussians(const SceneModel& model) {
  GaussianSet set;
  for (const auto& [id, track] : model.tracks) {
    const Vec3& point = model.points.at(id);
    double max_depth = 0.0;
    double focal = 0.0;
    for (const auto& obs : track.observations) {
      const auto& cam = model.Camera(obs.image);
      const double z = cam.pose.Depth(point);
      if (z > max_depth) {
        max_depth = z;
        focal = cam.intrinsics.fx;
      }
    }
    if (!(max_depth > 0.0)) {
      Fail(ErrorCode::kCheiralityFailure, "point " + std::to_string(id) + " has no positive depth");
    }
    set.AddSfmPoint(id, point, max_depth / focal);
  }
  return set;
}

double RayAlpha(const Gaussian3D& g, const Vec3& origin, const Vec3& dir, double* along) {
  const Vec3 v = g.mean - origin;
  const double t = v.dot(dir);
  if (along) *along = t;
  const Vec3 diff = t * dir - v;
  const double d2 = diff.squaredNorm();
  if (d2 == 0.0) return g.opacity;
  const Vec3 local = g.rotation.conjugate() * diff;
  const double spread = (g.scale.array().square() * local.array().square()).sum();
  return g.opacity * std::exp(-0.5 * d2 * d2 / spread);
}

std::vector<Eigen::Vector2i> FootprintPixels(const Gaussian3D& target, const CameraPose& pose,
                                             const CameraIntrinsics& k, double sigmas) {
  const Vec3 cam = pose.ToCamera(target.mean);
  if (!(cam.z() > kMinDepth)) Fail(ErrorCode::kBehindCamera, "target behind the camera");
  const Vec2 uv(k.fx * cam.x() / cam.z() + k.cx, k.fy * cam.y() / cam.z() + k.cy);
  if (!InImage(uv, k)) Fail(ErrorCode::kOutOfImage, "target projects outside the image");

  const double radius = sigmas * target.scale.maxCoeff() * std::max(k.fx, k.fy) / cam.z();
  std::vector<Eigen::Vector2i> pixels;
  const int x0 = std::max(0, static_cast<int>(std::ceil(uv.x() - radius)));
  const int x1 = std::min(k.width - 1, static_cast<int>(std::floor(uv.x() + radius)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(uv.y() - radius)));
  const int y1 = std::min(k.height - 1, static_cast<int>(std::floor(uv.y() + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - uv.x();
      const double dy = y - uv.y();
      if (dx * dx + dy * dy <= r2) pixels.emplace_back(x, y);
    }
  }
  if (pixels.empty()) {
    pixels.emplace_back(std::clamp(static_cast<int>(std::lround(uv.x())), 0, k.width - 1),
                        std::clamp(static_cast<int>(std::lround(uv.y())), 0, k.height - 1));
  }
  return pixels;
}

SplatVisibility::SplatVisibility(const GaussianSet& set, const CameraPose& pose,
                                 const CameraIntrinsics& k, const VisibilityOptions& options)
    : set_(set), pose_(pose), k_(k), options_(options), center_(pose.Center()) {
  tiles_x_ = (k.width + kTile - 1) / kTile;
  tiles_y_ = (k.height + kTile - 1) / kTile;
  tiles_.resize(static_cast<std::size_t>(tiles_x_) * tiles_y_);

  const auto& gaussians = set.gaussians();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    if (!Considered(i)) continue;
    const auto& g = gaussians[i];
    if (g.opacity < options_.min_alpha) continue;
    // A ray can only pass the alpha cutoff within this distance of the mean.
    const double reach = g.scale.maxCoeff() *
                             std::sqrt(2.0 * std::log(g.opacity / options_.min_alpha)) *
                             (1.0 + 1e-6) +
                         1e-9 * (1.0 + g.mean.norm());
    const Vec3 m = pose.ToCamera(g.mean);
    if (m.z() + reach <= 0.0) continue;
    if (m.z() - reach <= 1e-9) {
      global_.push_back(i);
      continue;
    }
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (double sz : {-1.0, 1.0}) {
      const double z = m.z() + sz * reach;
      for (double s : {-1.0, 1.0}) {
        const double u = k.fx * (m.x() + s * reach) / z + k.cx;
        const double v = k.fy * (m.y() + s * reach) / z + k.cy;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    }
    umin -= 1.0;
    vmin -= 1.0;
    umax += 1.0;
    vmax += 1.0;
    if (umax < 0.0 || vmax < 0.0 || umin > k.width - 1.0 || vmin > k.height - 1.0) continue;
    const int tx0 = std::max(0, static_cast<int>(std::floor(umin)) / kTile);
    const int ty0 = std::max(0, static_cast<int>(std::floor(vmin)) / kTile);
    const int tx1 = std::min(tiles_x_ - 1, static_cast<int>(std::floor(std::min(umax, k.width - 1.0))) / kTile);
    const int ty1 = std::min(tiles_y_ - 1, static_cast<int>(std::floor(std::min(vmax, k.height - 1.0))) / kTile);
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) tiles_[ty * tiles_x_ + tx].push_back(i);
    }
  }
}

bool SplatVisibility::Considered(std::size_t index) const {
  const auto& g = set_.gaussians()[index];
  return g.kind == GaussianKind::kOccluder ||
         (options_.sfm_points_occlude && g.kind == GaussianKind::kSfmPoint);
}

double SplatVisibility::RayScore(std::size_t target, const Eigen::Vector2i& pixel) const {
  const auto& gaussians = set_.gaussians();
  const Vec3 dir = PixelRay(pixel.cast<double>(), pose_, k_);
  const double target_along = (gaussians[target].mean - center_).dot(dir);

  std::vector<std::tuple<double, std::size_t, double>> hits;
  auto consider = [&](std::size_t i) {
    if (i == target) return;
    double along = 0.0;
    const double alpha = RayAlpha(gaussians[i], center_, dir, &along);
    if (alpha < options_.min_alpha || !(along > 0.0) || !(along < target_along)) return;
    hits.emplace_back(along, i, alpha);
  };
  for (std::size_t i : tiles_[(pixel.y() / kTile) * tiles_x_ + pixel.x() / kTile]) consider(i);
  for (std::size_t i : global_) consider(i);
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });

  double transmittance = 1.0;
  for (const auto& hit : hits) transmittance *= 1.0 - std::get<2>(hit);
  return gaussians[target].opacity * transmittance;
}

VisibilityResult SplatVisibility::Query(PointId point_id) const {
  const std::size_t target = set_.IndexOf(point_id);
  const auto pixels =
      FootprintPixels(set_.gaussians()[target], pose_, k_, options_.footprint_sigmas);
  double best = 0.0;
  for (const auto& px : pixels) best = std::max(best, RayScore(target, px));
  return {best > options_.eps_v, best};
}

VisibilityResult CompositeVisibility(const GaussianSet& set, PointId point_id,
                                     const CameraPose& pose, const CameraIntrinsics& k,
                                     const VisibilityOptions& options) {
  return SplatVisibility(set, pose, k, options).Query(point_id);
}

void WriteGaussiansPly(const std::filesystem::path& path, const std::vector<Gaussian3D>& gaussians) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << '\n';
  for (const char* name : {"x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                           "rot_2", "rot_3", "opacity"}) {
    out << "property float " << name << '\n';
  }
  out << "property uchar kind\nend_header\n";
  for (const auto& g : gaussians) {
    const auto& q = g.rotation;
    for (double v : {g.mean.x(), g.mean.y(), g.mean.z(), g.scale.x(), g.scale.y(), g.scale.z(),
                     q.w(), q.x(), q.y(), q.z(), g.opacity}) {
      WriteF32(out, static_cast<float>(v));
    }
    out.put(static_cast<char>(g.kind));
  }
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<Gaussian3D> ReadGaussiansPly(const std::filesystem::path& path) {
  const PlyVertices v = ReadPlyVertices(path);
  std::vector<Gaussian3D> out(v.count);
  for (std::size_t i = 0; i < v.count; ++i) {
    auto& g = out[i];
    g.mean = Vec3(v.Column("x")[i], v.Column("y")[i], v.Column("z")[i]);
    g.scale = Vec3(v.Column("scale_0")[i], v.Column("scale_1")[i], v.Column("scale_2")[i]);
    g.rotation = Eigen::Quaterniond(v.Column("rot_0")[i], v.Column("rot_1")[i],
                                    v.Column("rot_2")[i], v.Column("rot_3")[i]);
    // Float-precision unit quaternions are kept as stored so that a written
    // set reads back identically.
    if (std::abs(g.rotation.norm() - 1.0) > 1e-6) g.rotation.normalize();
    g.opacity = v.Column("opacity")[i];
    g.kind = v.Column("kind")[i] == 0.0 ? GaussianKind::kSfmPoint : GaussianKind::kOccluder;
  }
  return out;
}

}  // namespace densesfm
