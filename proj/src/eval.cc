#include "densesfm/eval.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <unordered_map>

#include <Eigen/SVD>

#include "densesfm/io_util.h"

namespace densesfm {

namespace {

using CellKey = std::array<std::int64_t, 3>;

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : k) h = (h ^ static_cast<std::uint64_t>(v)) * 1099511628211ull;
    return static_cast<std::size_t>(h);
  }
};

class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[Key(points[i])].push_back(i);
  }

  // Distance to the nearest point, or +inf if none is within one cell.
  double Nearest(const Vec3& q) const {
    const CellKey c = Key(q);
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) best = std::min(best, (points_[i] - q).norm());
        }
      }
    }
    return best;
  }

 private:
  CellKey Key(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
};

std::vector<double> WithinCounts(std::span<const Vec3> queries, const PointGrid& grid,
                                 std::span<const double> thresholds) {
  std::vector<double> counts(thresholds.size(), 0.0);
  for (const auto& q : queries) {
    const double d = grid.Nearest(q);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (d <= thresholds[t]) counts[t] += 1.0;
    }
  }
  return counts;
}

}  // namespace

std::vector<CloudScore> AccuracyCompleteness(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                             std::span<const double> thresholds) {
  if (pred.empty() || gt.empty()) Fail(ErrorCode::kEmptyCloud, "point cloud is empty");
  double max_t = 0.0;
  for (double t : thresholds) {
    if (!(t > 0.0)) Fail(ErrorCode::kInvalidArgument, "thresholds must be > 0");
    max_t = std::max(max_t, t);
  }
  // Points outside the 27-cell neighbourhood are farther than a cell, hence
  // farther than every threshold.
  const double cell = max_t * (1.0 + 1e-6);
  const PointGrid gt_grid(gt, cell);
  const PointGrid pred_grid(pred, cell);
  const auto acc = WithinCounts(pred, gt_grid, thresholds);
  const auto comp = WithinCounts(gt, pred_grid, thresholds);
  std::vector<CloudScore> out;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    out.push_back({thresholds[t], 100.0 * acc[t] / static_cast<double>(pred.size()),
                   100.0 * comp[t] / static_cast<double>(gt.size())});
  }
  return out;
}

Similarity3 AlignPoints(std::span<const Vec3> from, std::span<const Vec3> to) {
  if (from.size() != to.size()) Fail(ErrorCode::kInvalidArgument, "point sets differ in size");
  if (from.size() < 3) Fail(ErrorCode::kDegenerateConfiguration, "need at least three points");
  const double n = static_cast<double>(from.size());
  Vec3 mx = Vec3::Zero(), my = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    mx += from[i];
    my += to[i];
  }
  mx /= n;
  my /= n;
  Mat3 cov = Mat3::Zero();
  Mat3 sxx = Mat3::Zero();
  double var_x = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const Vec3 dx = from[i] - mx;
    cov += (to[i] - my) * dx.transpose();
    sxx += dx * dx.transpose();
    var_x += dx.squaredNorm();
  }
  cov /= n;
  var_x /= n;
  const Eigen::JacobiSVD<Mat3> spread(sxx);
  const Vec3 sv = spread.singularValues();
  if (!(sv[1] > 1e-12 * sv[0])) {
    Fail(ErrorCode::kDegenerateConfiguration, "points are collinear or coincident");
  }
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s[2] = -1.0;
  Similarity3 sim;
  sim.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  sim.scale = svd.singularValues().dot(s) / var_x;
  sim.translation = my - sim.scale * sim.rotation * mx;
  return sim;
}

Similarity3 AlignModels(const SceneModel& pred, const std::map<ImageId, CameraPose>& gt) {
  std::vector<Vec3> from, to;
  for (const auto& [image, view] : pred.cameras) {
    auto it = gt.find(image);
    if (it == gt.end()) continue;
    from.push_back(view.pose.Center());
    to.push_back(it->second.Center());
  }
  return AlignPoints(from, to);
}

std::map<ImageId, double> PoseErrors(const std::map<ImageId, CameraPose>& pred,
                                     const std::map<ImageId, CameraPose>& gt) {
  if (pred.size() != gt.size() || pred.size() < 2) {
    Fail(ErrorCode::kAlignmentFailure, "pose sets must share at least two images");
  }
  std::vector<Vec3> from, to;
  for (const auto& [image, pose] : pred) {
    auto it = gt.find(image);
    if (it == gt.end()) Fail(ErrorCode::kAlignmentFailure, "image " + std::to_string(image) + " missing in gt");
    from.push_back(pose.Center());
    to.push_back(it->second.Center());
  }
  Similarity3 sim;
  try {
    sim = AlignPoints(from, to);
  } catch (const Error& e) {
    Fail(ErrorCode::kAlignmentFailure, e.what());
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& c : to) centroid += c;
  centroid /= static_cast<double>(to.size());
  double spread = 0.0;
  for (const auto& c : to) spread += (c - centroid).squaredNorm();
  spread = std::sqrt(spread / static_cast<double>(to.size()));
  if (!(spread > 0.0)) Fail(ErrorCode::kAlignmentFailure, "gt centers coincide");

  constexpr double kDeg = 180.0 / std::numbers::pi;
  std::map<ImageId, double> errors;
  for (const auto& [image, pose] : pred) {
    const CameraPose aligned = sim.Apply(pose);
    const CameraPose& ref = gt.at(image);
    const double rot = RotationAngle(aligned.rotation() * ref.rotation().transpose()) * kDeg;
    const double pos = std::atan((aligned.Center() - ref.Center()).norm() / spread) * kDeg;
    errors[image] = std::max(rot, pos);
  }
  return errors;
}

std::vector<double> AucFromErrors(std::vector<double> errors, std::span<const double> thresholds) {
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  std::vector<double> out;
  for (double t : thresholds) {
    // Recall is piecewise linear through (errors[i], (i + 1) / n), then flat up to t.
    double area = 0.0;
    double prev_e = 0.0;
    double prev_r = 0.0;
    for (std::size_t i = 0; i < errors.size() && errors[i] < t; ++i) {
      const double r = static_cast<double>(i + 1) / n;
      area += 0.5 * (errors[i] - prev_e) * (prev_r + r);
      prev_e = errors[i];
      prev_r = r;
    }
    area += (t - prev_e) * prev_r;
    out.push_back(100.0 * area / t);
  }
  return out;
}

std::vector<double> PoseAuc(const std::map<ImageId, CameraPose>& pred,
                            const std::map<ImageId, CameraPose>& gt,
                            std::span<const double> thresholds) {
  std::vector<double> errors;
  for (const auto& [image, e] : PoseErrors(pred, gt)) errors.push_back(e);
  return AucFromErrors(std::move(errors), thresholds);
}

std::map<ImageId, CameraPose> PosesOf(const SceneModel& model) {
  std::map<ImageId, CameraPose> poses;
  for (const auto& [image, view] : model.cameras) poses.emplace(image, view.pose);
  return poses;
}

void WriteMetrics(const std::filesystem::path& path, const std::map<std::string, double>& metrics) {
  std::ofstream out(path);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "# pose error = max(rotation angle, atan(center distance / rms gt center spread)), degrees,\n"
         "# after a similarity alignment of camera centers; AUC in percent\n";
  for (const auto& [key, value] : metrics) out << key << " = " << FormatDouble(value) << '\n';
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace densesfm
