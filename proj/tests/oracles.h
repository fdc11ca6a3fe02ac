#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. None of them calls the code path it checks.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "densesfm/eval.h"
#include "densesfm/optimize.h"
#include "densesfm/refine.h"
#include "densesfm/splatvis.h"

namespace densesfm::oracle {

// Posterior mean with the kernel matrices built entry by entry and an
// explicit inverse.
inline Eigen::MatrixXd GpMean(const FeaturePatch& ref, const FeaturePatch& query, const GpOptions& o) {
  const int n = ref.size * ref.size;
  Eigen::MatrixXd krq(n, n), kqq(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      krq(i, j) = CosineKernel(ref.features.row(i).transpose(), query.features.row(j).transpose(), o.tau, o.eps);
      kqq(i, j) = CosineKernel(query.features.row(i).transpose(), query.features.row(j).transpose(), o.tau, o.eps);
    }
  }
  kqq += o.noise_variance * Eigen::MatrixXd::Identity(n, n);
  return krq * kqq.inverse() * PatchEncoding(query.size, o.num_freqs);
}

// Enumerates every Gaussian on every footprint ray, no screen-space index.
inline double VisibilityScore(const GaussianSet& set, PointId id, const CameraPose& pose,
                              const CameraIntrinsics& k, const VisibilityOptions& o) {
  const auto& gs = set.gaussians();
  const std::size_t target = set.IndexOf(id);
  const Vec3 c = pose.Center();
  double best = 0.0;
  for (const auto& px : FootprintPixels(gs[target], pose, k, o.footprint_sigmas)) {
    const Vec3 dir = PixelRay(px.cast<double>(), pose, k);
    const double t_target = (gs[target].mean - c).dot(dir);
    std::vector<std::pair<std::pair<double, std::size_t>, double>> front;
    for (std::size_t i = 0; i < gs.size(); ++i) {
      if (i == target) continue;
      if (gs[i].kind == GaussianKind::kSfmPoint && !o.sfm_points_occlude) continue;
      double along = 0.0;
      const double a = RayAlpha(gs[i], c, dir, &along);
      if (a >= o.min_alpha && along > 0.0 && along < t_target) front.push_back({{along, i}, a});
    }
    std::sort(front.begin(), front.end());
    double t = 1.0;
    for (const auto& f : front) t *= 1.0 - f.second;
    best = std::max(best, gs[target].opacity * t);
  }
  return best;
}

// Whether the point projects in front of the camera and inside its image.
inline bool ProjectsInto(const CameraView& cam, const Vec3& p) {
  const Vec3 x = cam.pose.ToCamera(p);
  if (x.z() <= 0) return false;
  const Vec2 uv(cam.intrinsics.fx * x.x() / x.z() + cam.intrinsics.cx,
                cam.intrinsics.fy * x.y() / x.z() + cam.intrinsics.cy);
  return InImage(uv, cam.intrinsics);
}

// Number of cameras in which the point projects in front and in the image.
inline std::size_t Covisibility(const SceneModel& m, const Vec3& p) {
  std::size_t n = 0;
  for (const auto& [image, cam] : m.cameras) n += ProjectsInto(cam, p);
  return n;
}

// Percentage of `a` points whose nearest `b` point is within t, by all pairs.
inline double FractionWithin(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double t) {
  int hit = 0;
  for (const auto& p : a) {
    double best = 1e300;
    for (const auto& q : b) best = std::min(best, (p - q).norm());
    hit += best <= t;
  }
  return 100.0 * hit / static_cast<double>(a.size());
}

// Recall curve through (0, 0) and (e_i, (i + 1) / n), held flat to t.
inline double TrapezoidAuc(std::vector<double> e, double t) {
  std::sort(e.begin(), e.end());
  std::vector<double> xs{0.0}, ys{0.0};
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!(e[i] < t)) break;
    xs.push_back(e[i]);
    ys.push_back(static_cast<double>(i + 1) / e.size());
  }
  xs.push_back(t);
  ys.push_back(ys.back());
  double area = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2;
  return 100.0 * area / t;
}

// Umeyama via an explicit SVD of the cross-covariance.
inline Similarity3 Umeyama(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  const double n = from.size();
  Vec3 mf = Vec3::Zero(), mt = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) mf += from[i] / n, mt += to[i] / n;
  Mat3 cov = Mat3::Zero();
  double var = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    cov += (to[i] - mt) * (from[i] - mf).transpose() / n;
    var += (from[i] - mf).squaredNorm() / n;
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;
  Similarity3 out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * s).trace() / var;
  out.translation = mt - out.scale * out.rotation * mf;
  return out;
}

// Largest |analytic - central difference| / max(1, |fd|) over all loss
// gradient entries.
inline double LossGradientError(const std::vector<LossTerm>& terms, double alpha) {
  LossGradient g;
  ConfidenceLoss(terms, alpha, &g);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      auto plus = terms, minus = terms;
      if (axis < 2) {
        plus[i].predicted[axis] += h;
        minus[i].predicted[axis] -= h;
      } else {
        plus[i].confidence += h;
        minus[i].confidence -= h;
      }
      const double fd = (ConfidenceLoss(plus, alpha) - ConfidenceLoss(minus, alpha)) / (2 * h);
      const double an = axis < 2 ? g.d_predicted[i][axis] : g.d_confidence[i];
      worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

// Same measure per Jacobian column of the reprojection residual.
inline double ReprojectionJacobianError(const CameraPose& pose, const CameraIntrinsics& k, const Vec3& point,
                                        const Vec2& obs) {
  Eigen::Matrix<double, 2, 13> j;
  ReprojectionResidual(pose, k, point, obs, &j);
  double worst = 0.0;
  for (int col = 0; col < 13; ++col) {
    auto eval = [&](double h) {
      CameraPose p = pose;
      CameraIntrinsics kk = k;
      Vec3 x = point;
      if (col < 3) {
        Vec3 w = Vec3::Zero();
        w[col] = h;
        p = CameraPose(ExpSO3(w) * pose.rotation(), pose.translation());
      } else if (col < 6) {
        Vec3 t = pose.translation();
        t[col - 3] += h;
        p.SetTranslation(t);
      } else if (col == 6) {
        kk.fx += h;
      } else if (col == 7) {
        kk.fy += h;
      } else if (col == 8) {
        kk.cx += h;
      } else if (col == 9) {
        kk.cy += h;
      } else {
        x[col - 10] += h;
      }
      return ReprojectionResidual(p, kk, x, obs);
    };
    const double h = col >= 6 && col < 10 ? 1e-3 : 1e-6;
    const Vec2 fd = (eval(h) - eval(-h)) / (2 * h);
    worst = std::max(worst, (j.col(col) - fd).norm() / std::max(1.0, fd.norm()));
  }
  return worst;
}

}  // namespace densesfm::oracle
