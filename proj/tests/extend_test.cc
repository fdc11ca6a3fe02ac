#include "densesfm/extend.h"
#include "oracles.h"
#include "test_support.h"

namespace densesfm {
namespace {

using testing::Gen;

// Points near the origin seen by a ring of cameras, tracks built from the
// exact projections into two cameras each.
SceneModel PairwiseScene(Gen& gen, int cameras, int points) {
  SceneModel m = testing::RingCameras(cameras, 8.0, testing::Intrinsics());
  for (PointId id = 1; id <= static_cast<PointId>(points); ++id) {
    const Vec3 p = gen.Vec(-1, 1);
    const ImageId a = static_cast<ImageId>(gen.Int(1, cameras));
    ImageId b = a;
    while (b == a) b = static_cast<ImageId>(gen.Int(1, cameras));
    Track t;
    t.point_id = id;
    for (ImageId i : {a, b}) t.observations.push_back({i, Project(p, m.Camera(i).pose, m.Camera(i).intrinsics)});
    m.points[id] = p;
    m.tracks[id] = t;
  }
  return m;
}

TEST(ExtendTracks, FullCovisibilityReachesEveryCamera) {
  Gen gen(61);
  const SceneModel m = PairwiseScene(gen, 6, 50);
  ExtendReport rep;
  const SceneModel e = ExtendTracks(m, InitGaussians(m), {}, &rep);
  for (const auto& [id, t] : e.tracks) {
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.size(), oracle::Covisibility(m, m.points.at(id)));
    for (const auto& obs : t.observations) {
      const auto& cam = m.Camera(obs.image);
      EXPECT_LT((obs.pixel - Project(m.points.at(id), cam.pose, cam.intrinsics)).norm(), 1e-9);
    }
  }
  EXPECT_EQ(rep.added, 50u * 4u);
  EXPECT_NO_THROW(e.Validate());
}

TEST(ExtendTracks, OccludedCameraExcluded) {
  Gen gen(62);
  SceneModel m = PairwiseScene(gen, 6, 1);
  Track& t = m.tracks.begin()->second;
  const Vec3 p = m.points.begin()->second;
  t.observations = {{1, Project(p, m.Camera(1).pose, m.Camera(1).intrinsics)},
                    {2, Project(p, m.Camera(2).pose, m.Camera(2).intrinsics)}};
  GaussianSet set = InitGaussians(m);
  Gaussian3D occ;
  occ.mean = 0.5 * (p + m.Camera(4).pose.Center());
  occ.scale = Vec3::Constant(0.1);
  occ.opacity = 0.9;
  set.AddOccluder(occ);
  ExtendReport rep;
  const SceneModel e = ExtendTracks(m, set, {}, &rep);
  const Track& out = e.tracks.begin()->second;
  EXPECT_EQ(out.size(), 5u);
  EXPECT_FALSE(out.HasImage(4));
  for (ImageId i : {3, 5, 6}) EXPECT_TRUE(out.HasImage(i));
  EXPECT_EQ(rep.occluded, 1u);
}

TEST(ExtendTracks, CameraFacingAwaySkipped) {
  Gen gen(63);
  SceneModel m = PairwiseScene(gen, 4, 10);
  // Between the ring and the points, looking outwards.
  m.cameras[9] = {testing::LookAtPose(Vec3(0, 0, 3), Vec3(0, 0, 10)), testing::Intrinsics(), "away"};
  ExtendReport rep;
  SceneModel e;
  ASSERT_NO_THROW(e = ExtendTracks(m, InitGaussians(m), {}, &rep));
  for (const auto& [id, t] : e.tracks) EXPECT_FALSE(t.HasImage(9));
  EXPECT_EQ(rep.behind_camera, 10u);
}

TEST(ExtendTracks, InconsistentObservationBlocksExtension) {
  Gen gen(64);
  SceneModel m = PairwiseScene(gen, 6, 20);
  for (auto& [id, t] : m.tracks) t.observations[0].pixel.y() += 40.0;
  ExtendReport rep;
  const SceneModel e = ExtendTracks(m, InitGaussians(m), {}, &rep);
  EXPECT_GT(rep.epipolar_rejected, 0u);
  EXPECT_EQ(rep.added + rep.epipolar_rejected + rep.occluded, rep.candidates);
}

TEST(ExtendTracks, SupersetAndIdempotent) {
  Gen gen(65);
  for (int trial = 0; trial < 5; ++trial) {
    SceneModel m = PairwiseScene(gen, gen.Int(3, 8), 40);
    GaussianSet set = InitGaussians(m);
    for (int i = 0; i < 15; ++i) {
      Gaussian3D g;
      g.mean = gen.Vec(-3, 3);
      g.scale = gen.Vec(0.05, 0.5);
      g.rotation = Eigen::Quaterniond(gen.Rotation());
      g.opacity = gen.Uniform(0.2, 1.0);
      set.AddOccluder(g);
    }
    ExtendOptions o;
    o.threads = 1 + trial % 3;
    const SceneModel e = ExtendTracks(m, set, o);
    double before = 0, after = 0;
    for (const auto& [id, t] : m.tracks) {
      const Track& u = e.tracks.at(id);
      ASSERT_GE(u.size(), t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(u.observations[i].image, t.observations[i].image);
        EXPECT_EQ(u.observations[i].pixel, t.observations[i].pixel);
      }
      EXPECT_EQ(e.points.at(id), m.points.at(id));
      before += t.size();
      after += u.size();
    }
    EXPECT_GE(after, before);
    const SceneModel again = ExtendTracks(e, set, o);
    for (const auto& [id, t] : e.tracks) EXPECT_EQ(again.tracks.at(id).size(), t.size());
  }
}

}  // namespace
}  // namespace densesfm
