#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "densesfm/refine.h"
#include "densesfm/scene.h"

namespace densesfm {

enum class RobustLoss { kTrivial, kHuber, kCauchy };

std::string_view RobustLossName(RobustLoss loss);
RobustLoss ParseRobustLoss(std::string_view name);

// rho(s) on the squared residual norm s, and its derivative.
double RobustRho(RobustLoss loss, double scale, double s);
double RobustWeight(RobustLoss loss, double scale, double s);

struct BAConfig {
  int max_iterations = 50;
  // Stop once an accepted step lowers the cost by less than this fraction.
  double function_tolerance = 1e-6;
  RobustLoss loss = RobustLoss::kHuber;
  double loss_scale = 1.0;
  bool refine_poses = true;
  bool refine_intrinsics = false;
  bool refine_points = true;
  double eps_f = 3.0;

  void Validate() const;
};

struct BAIteration {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double step_norm = 0.0;
};

struct BAReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  // One record per accepted step.
  std::vector<BAIteration> records;

  // "iteration cost lambda step_norm" per line.
  std::string ToText() const;
};

// Residual projection(pose, k, point) - observed and its Jacobian with columns
// [d_omega(3), d_t(3), fx, fy, cx, cy, point(3)], where the rotation moves as
// R <- Exp(d_omega) R. Throws kBehindCamera.
Vec2 ReprojectionResidual(const CameraPose& pose, const CameraIntrinsics& k, const Vec3& point,
                          const Vec2& observed, Eigen::Matrix<double, 2, 13>* jacobian = nullptr);

// Sum over observations of rho(|residual|^2).
double RobustCost(const SceneModel& model, RobustLoss loss, double scale);

// Levenberg-Marquardt over the variable blocks with the point blocks
// eliminated by Schur complement. When poses vary, the smallest-id camera is
// held fixed and one translation component of the next camera (the one that
// best measures the baseline) is frozen to pin the scale. Throws
// kDegenerateGauge if that baseline vanishes and kCheiralityFailure if an
// observed point starts behind its camera.
SceneModel BundleAdjust(const SceneModel& model, const BAConfig& config,
                        BAReport* report = nullptr);

// Drops observations whose reprojection error exceeds eps_f (or that fall
// behind the camera), then tracks under two observations with their points.
SceneModel FilterOutliers(const SceneModel& model, double eps_f);

struct RefineLoopConfig {
  RefineOptions refine;
  BAConfig ba;
};

struct RefineLoopReport {
  // Mean reprojection error before the first iteration and after each one.
  std::vector<double> mean_errors;
  std::vector<RefineReport> refine;
  std::vector<BAReport> ba;
};

// iterations x [RefineTracks -> BundleAdjust -> FilterOutliers].
SceneModel RefineLoop(const SceneModel& model, const FeatureProvider& provider,
                      const Decoder& decoder, int iterations, const RefineLoopConfig& config,
                      RefineLoopReport* report = nullptr);

}  // namespace densesfm
