#include <algorithm>
#include <set>
#include <vector>

#include "densesfm/tracks.h"
#include "test_support.h"

namespace densesfm {
namespace {

using testing::Gen;

SparseMatchSet Set(ImageId a, ImageId b, std::vector<std::pair<Vec2, Vec2>> pairs) {
  SparseMatchSet s;
  s.image_a = a;
  s.image_b = b;
  for (const auto& [pa, pb] : pairs) s.pairs.push_back({pa, pb, 1.0});
  return s;
}

using Node = std::pair<ImageId, std::pair<double, double>>;
using Partition = std::set<std::set<Node>>;

Partition PartitionOf(const std::vector<Track>& tracks) {
  Partition p;
  for (const auto& t : tracks) {
    std::set<Node> c;
    for (const auto& o : t.observations) c.insert({o.image, {o.pixel.x(), o.pixel.y()}});
    p.insert(c);
  }
  return p;
}

// Components kept as explicit node lists; an edge merges two components
// unless the union would hold two nodes of one image.
Partition BuildOracle(const std::vector<SparseMatchSet>& sets) {
  std::vector<std::set<Node>> comps;
  auto find = [&](const Node& n) -> int {
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (comps[i].count(n)) return static_cast<int>(i);
    }
    comps.push_back({n});
    return static_cast<int>(comps.size()) - 1;
  };
  for (const auto& s : sets) {
    for (const auto& m : s.pairs) {
      const int a = find({s.image_a, {m.pixel_a.x(), m.pixel_a.y()}});
      const int b = find({s.image_b, {m.pixel_b.x(), m.pixel_b.y()}});
      if (a == b) continue;
      bool conflict = false;
      for (const auto& x : comps[a]) {
        for (const auto& y : comps[b]) conflict |= x.first == y.first;
      }
      if (conflict) continue;
      comps[a].insert(comps[b].begin(), comps[b].end());
      comps.erase(comps.begin() + b);
    }
  }
  return Partition(comps.begin(), comps.end());
}

TEST(BuildTracks, TransitiveClosure) {
  const std::vector<SparseMatchSet> sets{Set(1, 2, {{Vec2(1, 1), Vec2(2, 2)}}),
                                         Set(2, 3, {{Vec2(2, 2), Vec2(3, 3)}})};
  const auto tracks = BuildTracks(sets);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].size(), 3u);
  EXPECT_EQ(tracks[0].point_id, 1u);
}

TEST(BuildTracks, ConflictDropsLaterEdge) {
  const std::vector<SparseMatchSet> sets{
      Set(1, 2, {{Vec2(1, 1), Vec2(2, 2)}, {Vec2(4, 4), Vec2(2, 2)}})};
  const auto tracks = BuildTracks(sets);
  EXPECT_EQ(PartitionOf(tracks), BuildOracle(sets));
  ASSERT_EQ(tracks.size(), 2u);
  EXPECT_EQ(tracks[0].size(), 2u);
  EXPECT_EQ(tracks[0].observations[0].pixel, Vec2(1, 1));
  EXPECT_EQ(tracks[1].size(), 1u);
  EXPECT_EQ(tracks[1].observations[0].pixel, Vec2(4, 4));
}

TEST(BuildTracks, EmptyInput) { EXPECT_TRUE(BuildTracks({}).empty()); }

TEST(BuildTracks, RandomGraphsMatchOracleAndPartitionNodes) {
  Gen gen(31);
  for (int trial = 0; trial < 60; ++trial) {
    const int images = gen.Int(2, 5);
    std::vector<SparseMatchSet> sets;
    std::set<Node> all;
    for (int e = 0; e < gen.Int(1, 8); ++e) {
      const ImageId a = gen.Int(1, images);
      ImageId b = gen.Int(1, images);
      if (a == b) b = a % images + 1;
      std::vector<std::pair<Vec2, Vec2>> pairs;
      for (int k = 0; k < gen.Int(0, 6); ++k) {
        // Small pools force shared nodes and conflicts; B-side sub-pixel.
        const Vec2 pa(gen.Int(0, 3), gen.Int(0, 2));
        const Vec2 pb(gen.Int(0, 3) + 0.25 * gen.Int(0, 1), gen.Int(0, 2));
        pairs.push_back({pa, pb});
        all.insert({a, {pa.x(), pa.y()}});
        all.insert({b, {pb.x(), pb.y()}});
      }
      sets.push_back(Set(a, b, pairs));
    }
    const auto tracks = BuildTracks(sets);
    EXPECT_EQ(PartitionOf(tracks), BuildOracle(sets));
    std::size_t nodes = 0;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      EXPECT_EQ(tracks[i].point_id, i + 1);
      std::set<ImageId> seen;
      for (const auto& o : tracks[i].observations) EXPECT_TRUE(seen.insert(o.image).second);
      nodes += tracks[i].size();
    }
    EXPECT_EQ(nodes, all.size());
  }
}

TEST(QuantizeMatches, RoundsToGrid) {
  const auto q = QuantizeMatches(Set(1, 2, {{Vec2(13.2, 7.9), Vec2(4, 8)}}), 4.0);
  ASSERT_EQ(q.pairs.size(), 1u);
  EXPECT_EQ(q.pairs[0].pixel_a, Vec2(12, 8));
  EXPECT_EQ(q.pairs[0].pixel_b, Vec2(4, 8));
}

TEST(QuantizeMatches, DedupKeepsHighestConfidence) {
  SparseMatchSet s = Set(1, 2, {{Vec2(13.2, 7.9), Vec2(4, 8)}, {Vec2(12.4, 8.3), Vec2(3.9, 8.1)}});
  s.pairs[0].confidence = 0.4;
  s.pairs[1].confidence = 0.9;
  const auto q = QuantizeMatches(s, 4.0);
  ASSERT_EQ(q.pairs.size(), 1u);
  EXPECT_EQ(q.pairs[0].confidence, 0.9);
}

TEST(QuantizeMatches, GridPointsAreFixedAndIdempotent) {
  Gen gen(32);
  SparseMatchSet s;
  for (int i = 0; i < 200; ++i) {
    s.pairs.push_back({Vec2(gen.Uniform(0, 100), gen.Uniform(0, 100)),
                       Vec2(gen.Uniform(0, 100), gen.Uniform(0, 100)), gen.Uniform(0, 1)});
  }
  const auto once = QuantizeMatches(s, 4.0);
  const auto twice = QuantizeMatches(once, 4.0);
  ASSERT_EQ(once.pairs.size(), twice.pairs.size());
  for (std::size_t i = 0; i < once.pairs.size(); ++i) {
    EXPECT_EQ(once.pairs[i].pixel_a, twice.pairs[i].pixel_a);
    EXPECT_EQ(once.pairs[i].pixel_b, twice.pairs[i].pixel_b);
    EXPECT_EQ(once.pairs[i].confidence, twice.pairs[i].confidence);
  }
}

// Cameras on the z axis looking down +z at depths given for a point at 0.
SceneModel DepthModel(const std::vector<double>& depths, Track* track) {
  SceneModel m;
  track->point_id = 1;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const ImageId id = static_cast<ImageId>(i + 1);
    m.cameras[id] = {CameraPose(Mat3::Identity(), Vec3(0, 0, depths[i])), testing::Intrinsics(), ""};
    track->observations.push_back({id, Vec2(319.5, 239.5), Provenance::kMatched});
  }
  m.points[1] = Vec3::Zero();
  m.tracks[1] = *track;
  return m;
}

TEST(SelectReferenceView, MedianDepth) {
  Track t;
  auto m = DepthModel({9, 2, 5}, &t);
  EXPECT_EQ(SelectReferenceView(t, m), 3u);
  Track t4;
  m = DepthModel({11, 5, 2, 9}, &t4);
  EXPECT_EQ(SelectReferenceView(t4, m), 2u);
  Track t2;
  m = DepthModel({7, 3}, &t2);
  EXPECT_EQ(SelectReferenceView(t2, m), 2u);
}

TEST(SelectReferenceView, NonPositiveDepth) {
  Track t;
  const auto m = DepthModel({3, -1}, &t);
  try {
    SelectReferenceView(t, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheiralityFailure);
  }
}

TEST(SelectReferenceView, InvariantUnderUniformScaling) {
  Gen gen(33);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> depths;
    for (int i = 0; i < gen.Int(2, 8); ++i) depths.push_back(gen.Uniform(1, 20));
    Track t;
    auto m = DepthModel(depths, &t);
    const ImageId before = SelectReferenceView(t, m);
    const double s = gen.Uniform(0.1, 10);
    for (auto& [id, cam] : m.cameras) cam.pose.SetTranslation(cam.pose.translation() * s);
    EXPECT_EQ(SelectReferenceView(t, m), before);
  }
}

TEST(TrackStats, MeanHistogramAndEmpty) {
  std::vector<Track> tracks(2);
  tracks[0].observations.resize(2);
  tracks[1].observations.resize(4);
  const auto s = ComputeTrackStats(tracks);
  EXPECT_EQ(s.count, 2u);
  EXPECT_DOUBLE_EQ(s.mean_length, 3.0);
  EXPECT_EQ(s.histogram.at(2), 1u);
  EXPECT_EQ(s.histogram.at(4), 1u);
  const auto e = ComputeTrackStats(std::vector<Track>{});
  EXPECT_EQ(e.count, 0u);
  EXPECT_EQ(e.mean_length, 0.0);
}

TEST(TriangulateTracks, KeepsIdsAndDropsShortTracks) {
  const auto k = testing::Intrinsics();
  const SceneModel cams = testing::RingCameras(3, 8.0, k);
  const Vec3 p(0.2, -0.1, 0.3);
  std::vector<Track> tracks(2);
  tracks[0].point_id = 7;
  for (const auto& [id, view] : cams.cameras) {
    tracks[0].observations.push_back({id, Project(p, view.pose, view.intrinsics), Provenance::kMatched});
  }
  tracks[1].point_id = 9;
  tracks[1].observations.push_back({1, Vec2(10, 10), Provenance::kMatched});
  TriangulationReport rep;
  const SceneModel m = TriangulateTracks(cams.cameras, tracks, &rep);
  EXPECT_EQ(rep.triangulated, 1u);
  EXPECT_EQ(rep.too_short, 1u);
  ASSERT_TRUE(m.points.count(7));
  EXPECT_LT((m.points.at(7) - p).norm(), 1e-9);
  EXPECT_NO_THROW(m.Validate());
}

}  // namespace
}  // namespace densesfm
