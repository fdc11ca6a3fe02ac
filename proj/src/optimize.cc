#include "densesfm/optimize.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <spdlog/spdlog.h>

#include "densesfm/io_util.h"

namespace densesfm {

std::string_view RobustLossName(RobustLoss loss) {
  switch (loss) {
    case RobustLoss::kTrivial: return "trivial";
    case RobustLoss::kHuber: return "huber";
    case RobustLoss::kCauchy: return "cauchy";
  }
  return "unknown";
}

RobustLoss ParseRobustLoss(std::string_view name) {
  if (name == "trivial" || name == "none" || name == "squared") return RobustLoss::kTrivial;
  if (name == "huber") return RobustLoss::kHuber;
  if (name == "cauchy") return RobustLoss::kCauchy;
  Fail(ErrorCode::kConfigInvalid, "unknown robust loss '" + std::string(name) + "'");
}

double RobustRho(RobustLoss loss, double scale, double s) {
  const double b2 = scale * scale;
  switch (loss) {
    case RobustLoss::kTrivial: return s;
    case RobustLoss::kHuber: return s <= b2 ? s : 2.0 * scale * std::sqrt(s) - b2;
    case RobustLoss::kCauchy: return b2 * std::log1p(s / b2);
  }
  return s;
}

double RobustWeight(RobustLoss loss, double scale, double s) {
  const double b2 = scale * scale;
  switch (loss) {
    case RobustLoss::kTrivial: return 1.0;
    case RobustLoss::kHuber: return s <= b2 ? 1.0 : scale / std::sqrt(s);
    case RobustLoss::kCauchy: return 1.0 / (1.0 + s / b2);
  }
  return 1.0;
}

void BAConfig::Validate() const {
  if (max_iterations < 0) Fail(ErrorCode::kConfigInvalid, "max iterations must be >= 0");
  if (!(function_tolerance > 0.0)) Fail(ErrorCode::kConfigInvalid, "function tolerance must be > 0");
  if (!(loss_scale > 0.0)) Fail(ErrorCode::kConfigInvalid, "loss scale must be > 0");
  if (!(eps_f > 0.0)) Fail(ErrorCode::kConfigInvalid, "eps_f must be > 0");
}

std::string BAReport::ToText() const {
  std::ostringstream out;
  for (const auto& r : records) {
    out << r.iteration << ' ' << FormatDouble(r.cost) << ' ' << FormatDouble(r.lambda) << ' '
        << FormatDouble(r.step_norm) << '\n';
  }
  return out.str();
}

Vec2 ReprojectionResidual(const CameraPose& pose, const CameraIntrinsics& k, const Vec3& point,
                          const Vec2& observed, Eigen::Matrix<double, 2, 13>* jacobian) {
  const Vec3 rp = pose.rotation() * point;
  const Vec3 x = rp + pose.translation();
  if (!(x.z() > kMinDepth)) Fail(ErrorCode::kBehindCamera, "point behind camera");
  const double iz = 1.0 / x.z();
  const Vec2 r(k.fx * x.x() * iz + k.cx - observed.x(), k.fy * x.y() * iz + k.cy - observed.y());
  if (jacobian) {
    Eigen::Matrix<double, 2, 3> dx;
    dx << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz, 0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
    auto& j = *jacobian;
    j.setZero();
    j.block<2, 3>(0, 0) = -dx * Skew(rp);
    j.block<2, 3>(0, 3) = dx;
    j(0, 6) = x.x() * iz;
    j(1, 7) = x.y() * iz;
    j(0, 8) = 1.0;
    j(1, 9) = 1.0;
    j.block<2, 3>(0, 10) = dx * pose.rotation();
  }
  return r;
}

double RobustCost(const SceneModel& model, RobustLoss loss, double scale) {
  double cost = 0.0;
  for (const auto& [id, track] : model.tracks) {
    const Vec3& p = model.points.at(id);
    for (const auto& obs : track.observations) {
      const auto& cam = model.Camera(obs.image);
      cost += RobustRho(loss, scale,
                        ReprojectionResidual(cam.pose, cam.intrinsics, p, obs.pixel).squaredNorm());
    }
  }
  return cost;
}

namespace {

constexpr int kCamParams = 10;

struct CameraState {
  ImageId image = 0;
  CameraPose pose;
  CameraIntrinsics k;
  std::vector<int> active;  // local parameter indices that vary
  int offset = 0;           // into the reduced camera vector
};

struct ObsRef {
  int cam = 0;
  int point = 0;
  Vec2 pixel;
};

struct Problem {
  std::vector<CameraState> cams;
  std::vector<PointId> point_ids;
  std::vector<Vec3> points;
  std::vector<ObsRef> obs;
  std::vector<std::vector<int>> point_obs;
  int camera_dims = 0;
};

// Robust cost, or nullopt if any point is at or behind a camera.
std::optional<double> Cost(const Problem& pb, const std::vector<CameraState>& cams,
                           const std::vector<Vec3>& points, const BAConfig& cfg) {
  double cost = 0.0;
  for (const auto& o : pb.obs) {
    const auto& c = cams[o.cam];
    const Vec3 x = c.pose.ToCamera(points[o.point]);
    if (!(x.z() > kMinDepth)) return std::nullopt;
    const Vec2 r(c.k.fx * x.x() / x.z() + c.k.cx - o.pixel.x(),
                 c.k.fy * x.y() / x.z() + c.k.cy - o.pixel.y());
    cost += RobustRho(cfg.loss, cfg.loss_scale, r.squaredNorm());
  }
  return cost;
}

void ApplyCameraStep(CameraState& c, const Eigen::Matrix<double, kCamParams, 1>& d) {
  const Vec3 omega = d.head<3>();
  const double angle = omega.norm();
  if (angle > 0.0) {
    const Eigen::Quaterniond dq(Eigen::AngleAxisd(angle, omega / angle));
    c.pose.SetRotation(dq * c.pose.quaternion());
  }
  c.pose.SetTranslation(c.pose.translation() + d.segment<3>(3));
  c.k.fx += d[6];
  c.k.fy += d[7];
  c.k.cx += d[8];
  c.k.cy += d[9];
}

Problem BuildProblem(const SceneModel& model, const BAConfig& cfg) {
  Problem pb;
  std::map<ImageId, int> cam_index;
  for (const auto& [image, view] : model.cameras) {
    cam_index[image] = static_cast<int>(pb.cams.size());
    pb.cams.push_back({image, view.pose, view.intrinsics, {}, 0});
  }
  for (const auto& [id, track] : model.tracks) {
    const int j = static_cast<int>(pb.points.size());
    pb.point_ids.push_back(id);
    pb.points.push_back(model.points.at(id));
    pb.point_obs.emplace_back();
    for (const auto& o : track.observations) {
      auto it = cam_index.find(o.image);
      if (it == cam_index.end()) {
        Fail(ErrorCode::kInvalidArgument, "observation of unknown image " + std::to_string(o.image));
      }
      if (!(model.cameras.at(o.image).pose.Depth(pb.points[j]) > kMinDepth)) {
        Fail(ErrorCode::kCheiralityFailure,
             "point " + std::to_string(id) + " behind image " + std::to_string(o.image));
      }
      pb.point_obs[j].push_back(static_cast<int>(pb.obs.size()));
      pb.obs.push_back({it->second, j, o.pixel});
    }
  }

  // Cameras that see nothing have no residuals and stay put.
  std::vector<bool> observed(pb.cams.size(), false);
  for (const auto& o : pb.obs) observed[o.cam] = true;

  int frozen_t = -1;
  const bool gauge = cfg.refine_poses && cfg.refine_points;
  if (gauge && pb.cams.size() >= 2) {
    const Vec3 baseline = pb.cams[1].pose.Center() - pb.cams[0].pose.Center();
    const double scale = pb.cams[0].pose.Center().norm() + pb.cams[1].pose.Center().norm() + 1.0;
    if (!(baseline.norm() > 1e-12 * scale)) {
      Fail(ErrorCode::kDegenerateGauge, "first two cameras share a center");
    }
    (pb.cams[1].pose.rotation() * baseline).cwiseAbs().maxCoeff(&frozen_t);
  }
  for (std::size_t c = 0; c < pb.cams.size(); ++c) {
    auto& cam = pb.cams[c];
    if (!observed[c]) continue;
    if (cfg.refine_poses && !(gauge && c == 0)) {
      for (int i = 0; i < 6; ++i) {
        if (c == 1 && i - 3 == frozen_t) continue;
        cam.active.push_back(i);
      }
    }
    if (cfg.refine_intrinsics) {
      for (int i = 6; i < kCamParams; ++i) cam.active.push_back(i);
    }
    cam.offset = pb.camera_dims;
    pb.camera_dims += static_cast<int>(cam.active.size());
  }
  return pb;
}

}  // namespace

SceneModel BundleAdjust(const SceneModel& model, const BAConfig& cfg, BAReport* report) {
  cfg.Validate();
  Problem pb = BuildProblem(model, cfg);
  BAReport rep;
  const int n_obs = static_cast<int>(pb.obs.size());
  const int n_pts = static_cast<int>(pb.points.size());
  const int nc = pb.camera_dims;
  const bool vary_points = cfg.refine_points;

  double cost = *Cost(pb, pb.cams, pb.points, cfg);
  rep.initial_cost = cost;
  double lambda = 1e-4;

  using Mat2x13 = Eigen::Matrix<double, 2, 13>;
  std::vector<Eigen::MatrixXd> jc(n_obs);
  std::vector<Eigen::Matrix<double, 2, 3>> jp(n_obs);
  std::vector<Vec2> res(n_obs);
  std::vector<double> weight(n_obs);

  int iter = 0;
  bool converged = cost == 0.0 || (nc == 0 && !vary_points);
  while (!converged && iter < cfg.max_iterations) {
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(nc, nc);
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(nc);
    std::vector<Mat3> v(n_pts, Mat3::Zero());
    std::vector<Vec3> gp(n_pts, Vec3::Zero());
    std::vector<Eigen::MatrixXd> w(n_obs);

    for (int i = 0; i < n_obs; ++i) {
      const auto& o = pb.obs[i];
      const auto& c = pb.cams[o.cam];
      Mat2x13 j;
      res[i] = ReprojectionResidual(c.pose, c.k, pb.points[o.point], o.pixel, &j);
      weight[i] = RobustWeight(cfg.loss, cfg.loss_scale, res[i].squaredNorm());
      jc[i].resize(2, c.active.size());
      for (std::size_t a = 0; a < c.active.size(); ++a) jc[i].col(a) = j.col(c.active[a]);
      jp[i] = j.rightCols<3>();
      const double wt = weight[i];
      const int off = c.offset;
      const int na = static_cast<int>(c.active.size());
      if (na > 0) {
        u.block(off, off, na, na) += wt * jc[i].transpose() * jc[i];
        gc.segment(off, na) += wt * jc[i].transpose() * res[i];
      }
      if (vary_points) {
        v[o.point] += wt * jp[i].transpose() * jp[i];
        gp[o.point] += wt * jp[i].transpose() * res[i];
        w[i] = wt * jc[i].transpose() * jp[i];
      }
    }

    double gmax = nc > 0 ? gc.cwiseAbs().maxCoeff() : 0.0;
    if (vary_points) {
      for (const auto& g : gp) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
    }
    if (gmax <= 1e-15 * (1.0 + cost)) {
      converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd s = u;
      for (int a = 0; a < nc; ++a) s(a, a) += lambda * std::max(u(a, a), 1e-6);
      Eigen::VectorXd b = -gc;
      std::vector<Mat3> vinv(n_pts);
      if (vary_points) {
        for (int j = 0; j < n_pts; ++j) {
          Mat3 vd = v[j];
          for (int a = 0; a < 3; ++a) vd(a, a) += lambda * std::max(v[j](a, a), 1e-6);
          vinv[j] = vd.inverse();
          if (nc == 0) continue;
          for (int oa : pb.point_obs[j]) {
            const auto& ca = pb.cams[pb.obs[oa].cam];
            const int na = static_cast<int>(ca.active.size());
            if (na == 0) continue;
            const Eigen::MatrixXd wv = w[oa] * vinv[j];
            b.segment(ca.offset, na) += wv * gp[j];
            for (int ob : pb.point_obs[j]) {
              const auto& cb = pb.cams[pb.obs[ob].cam];
              const int nb = static_cast<int>(cb.active.size());
              if (nb == 0) continue;
              s.block(ca.offset, cb.offset, na, nb) -= wv * w[ob].transpose();
            }
          }
        }
      }

      Eigen::VectorXd dc = Eigen::VectorXd::Zero(nc);
      bool solved = true;
      if (nc > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        solved = ldlt.info() == Eigen::Success;
        if (solved) dc = ldlt.solve(b);
        solved = solved && dc.allFinite();
      }
      std::vector<Vec3> dp(n_pts, Vec3::Zero());
      double step2 = dc.squaredNorm();
      if (solved && vary_points) {
        for (int j = 0; j < n_pts; ++j) {
          Vec3 rhs = -gp[j];
          for (int oa : pb.point_obs[j]) {
            const auto& ca = pb.cams[pb.obs[oa].cam];
            const int na = static_cast<int>(ca.active.size());
            if (na > 0) rhs -= w[oa].transpose() * dc.segment(ca.offset, na);
          }
          dp[j] = vinv[j] * rhs;
          step2 += dp[j].squaredNorm();
        }
        solved = std::isfinite(step2);
      }

      if (solved) {
        std::vector<CameraState> cams = pb.cams;
        for (auto& c : cams) {
          if (c.active.empty()) continue;
          Eigen::Matrix<double, kCamParams, 1> d = Eigen::Matrix<double, kCamParams, 1>::Zero();
          for (std::size_t a = 0; a < c.active.size(); ++a) d[c.active[a]] = dc[c.offset + a];
          ApplyCameraStep(c, d);
        }
        std::vector<Vec3> points = pb.points;
        for (int j = 0; j < n_pts; ++j) points[j] += dp[j];
        const auto trial = Cost(pb, cams, points, cfg);
        if (trial && *trial < cost) {
          const double decrease = (cost - *trial) / cost;
          pb.cams = std::move(cams);
          pb.points = std::move(points);
          cost = *trial;
          accepted = true;
          ++iter;
          rep.records.push_back({iter, cost, lambda, std::sqrt(step2)});
          lambda = std::max(lambda / 3.0, 1e-12);
          if (decrease < cfg.function_tolerance) converged = true;
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        // No descent left at any damping: a stationary point.
        converged = true;
        break;
      }
    }
  }

  SceneModel out = model;
  for (const auto& c : pb.cams) {
    auto& view = out.cameras.at(c.image);
    view.pose = c.pose;
    view.intrinsics = c.k;
  }
  for (int j = 0; j < n_pts; ++j) out.points.at(pb.point_ids[j]) = pb.points[j];

  rep.final_cost = cost;
  rep.iterations = iter;
  rep.converged = converged;
  spdlog::debug("bundle adjustment: cost {} -> {} in {} iterations", rep.initial_cost,
                rep.final_cost, rep.iterations);
  if (report) *report = std::move(rep);
  return out;
}

SceneModel FilterOutliers(const SceneModel& model, double eps_f) {
  SceneModel out = model;
  for (auto it = out.tracks.begin(); it != out.tracks.end();) {
    const Vec3& p = out.points.at(it->first);
    auto& obs = it->second.observations;
    std::erase_if(obs, [&](const Observation& o) {
      const auto& cam = out.Camera(o.image);
      const auto px = TryProject(p, cam.pose, cam.intrinsics);
      return !px || (*px - o.pixel).norm() > eps_f;
    });
    if (obs.size() < 2) {
      out.points.erase(it->first);
      it = out.tracks.erase(it);
    } else {
      if (it->second.reference && !it->second.HasImage(*it->second.reference)) {
        it->second.reference.reset();
      }
      ++it;
    }
  }
  return out;
}

SceneModel RefineLoop(const SceneModel& model, const FeatureProvider& provider,
                      const Decoder& decoder, int iterations, const RefineLoopConfig& config,
                      RefineLoopReport* report) {
  if (iterations < 0) Fail(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  RefineLoopReport rep;
  rep.mean_errors.push_back(MeanReprojectionError(model));
  SceneModel current = model;
  for (int i = 0; i < iterations; ++i) {
    RefineReport rr;
    current = RefineTracks(current, provider, decoder, config.refine, &rr);
    BAReport br;
    current = BundleAdjust(current, config.ba, &br);
    current = FilterOutliers(current, config.ba.eps_f);
    rep.mean_errors.push_back(MeanReprojectionError(current));
    spdlog::info("refine iteration {}: {} refined, {} skipped, BA cost {} -> {}, mean error {}",
                 i + 1, rr.refined, rr.skipped, br.initial_cost, br.final_cost,
                 rep.mean_errors.back());
    rep.refine.push_back(std::move(rr));
    rep.ba.push_back(std::move(br));
  }
  if (report) *report = std::move(rep);
  return current;
}

}  // namespace densesfm
