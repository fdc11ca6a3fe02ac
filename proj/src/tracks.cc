#include "densesfm/tracks.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace densesfm {

std::string_view ProvenanceName(Provenance p) {
  switch (p) {
    case Provenance::kMatched: return "matched";
    case Provenance::kExtended: return "extended";
    case Provenance::kRefined: return "refined";
  }
  return "matched";
}

Provenance ParseProvenance(std::string_view name) {
  if (name == "matched") return Provenance::kMatched;
  if (name == "extended") return Provenance::kExtended;
  if (name == "refined") return Provenance::kRefined;
  Fail(ErrorCode::kParse, "unknown provenance '" + std::string(name) + "'");
}

bool Track::HasImage(ImageId image) const { return Find(image) != nullptr; }

const Observation* Track::Find(ImageId image) const {
  for (const auto& obs : observations) {
    if (obs.image == image) return &obs;
  }
  return nullptr;
}

const CameraView& SceneModel::Camera(ImageId image) const {
  auto it = cameras.find(image);
  if (it == cameras.end()) {
    Fail(ErrorCode::kInvalidArgument, "unknown image " + std::to_string(image));
  }
  return it->second;
}

void SceneModel::Validate() const {
  for (const auto& [id, track] : tracks) {
    if (track.point_id != id) Fail(ErrorCode::kInvalidArgument, "track id mismatch");
    if (!points.count(id)) {
      Fail(ErrorCode::kInvalidArgument, "track " + std::to_string(id) + " has no point");
    }
    for (std::size_t i = 0; i < track.observations.size(); ++i) {
      const auto& obs = track.observations[i];
      auto cam = cameras.find(obs.image);
      if (cam == cameras.end()) {
        Fail(ErrorCode::kInvalidArgument, "observation of unknown image");
      }
      if (!InImage(obs.pixel, cam->second.intrinsics)) {
        Fail(ErrorCode::kInvalidArgument, "observation outside its image");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (track.observations[j].image == obs.image) {
          Fail(ErrorCode::kInvalidArgument,
               "track " + std::to_string(id) + " observes an image twice");
        }
      }
    }
    if (track.reference && !track.HasImage(*track.reference)) {
      Fail(ErrorCode::kInvalidArgument, "reference view is not part of the track");
    }
  }
}

PointId SceneModel::NextPointId() const {
  PointId next = 1;
  if (!points.empty()) next = std::max(next, points.rbegin()->first + 1);
  if (!tracks.empty()) next = std::max(next, tracks.rbegin()->first + 1);
  return next;
}

double MeanReprojectionError(const SceneModel& model) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [id, track] : model.tracks) {
    const Vec3& point = model.points.at(id);
    for (const auto& obs : track.observations) {
      const auto& cam = model.Camera(obs.image);
      auto proj = TryProject(point, cam.pose, cam.intrinsics);
      if (!proj) continue;
      sum += (*proj - obs.pixel).norm();
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

using NodeKey = std::tuple<ImageId, std::int64_t, std::int64_t>;

NodeKey KeyOf(ImageId image, const Vec2& p) {
  return {image, std::llround(p.x() * 1e4), std::llround(p.y() * 1e4)};
}

class TrackGraph {
 public:
  int Node(ImageId image, const Vec2& pixel) {
    auto [it, inserted] = index_.try_emplace(KeyOf(image, pixel), static_cast<int>(nodes_.size()));
    if (inserted) {
      nodes_.push_back({image, pixel, Provenance::kMatched});
      parent_.push_back(it->second);
      images_.push_back({{image, it->second}});
    }
    return it->second;
  }

  int Find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // Returns false (and leaves the graph untouched) on an image conflict.
  bool Union(int a, int b) {
    int ra = Find(a);
    int rb = Find(b);
    if (ra == rb) return true;
    auto& ia = images_[ra];
    auto& ib = images_[rb];
    for (const auto& [image, node] : ib) {
      for (const auto& [other, other_node] : ia) {
        if (image == other) return false;
      }
    }
    if (ia.size() < ib.size()) std::swap(ra, rb);
    parent_[rb] = ra;
    auto& keep = images_[ra];
    auto& drop = images_[rb];
    keep.insert(keep.end(), drop.begin(), drop.end());
    drop.clear();
    return true;
  }

  std::vector<Track> Components() {
    std::vector<int> order_of_root(nodes_.size(), -1);
    std::vector<Track> tracks;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const int root = Find(static_cast<int>(i));
      if (order_of_root[root] < 0) {
        order_of_root[root] = static_cast<int>(tracks.size());
        tracks.emplace_back();
        tracks.back().point_id = tracks.size();
      }
      tracks[order_of_root[root]].observations.push_back(nodes_[i]);
    }
    for (auto& t : tracks) {
      std::stable_sort(t.observations.begin(), t.observations.end(),
                       [](const Observation& a, const Observation& b) { return a.image < b.image; });
    }
    return tracks;
  }

 private:
  std::map<NodeKey, int> index_;
  std::vector<Observation> nodes_;
  std::vector<int> parent_;
  std::vector<std::vector<std::pair<ImageId, int>>> images_;
};

}  // namespace

std::vector<Track> BuildTracks(std::span<const SparseMatchSet> matches) {
  TrackGraph graph;
  for (const auto& set : matches) {
    for (const auto& m : set.pairs) {
      const int a = graph.Node(set.image_a, m.pixel_a);
      const int b = graph.Node(set.image_b, m.pixel_b);
      graph.Union(a, b);
    }
  }
  return graph.Components();
}

SparseMatchSet QuantizeMatches(const SparseMatchSet& matches, double r) {
  if (r < 1.0) Fail(ErrorCode::kInvalidArgument, "quantization radius must be >= 1");
  auto snap = [r](const Vec2& p) {
    return Vec2(r * std::round(p.x() / r), r * std::round(p.y() / r));
  };
  SparseMatchSet out = matches;
  out.pairs.clear();
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>, std::size_t> seen;
  for (const auto& m : matches.pairs) {
    SparseMatch q{snap(m.pixel_a), snap(m.pixel_b), m.confidence};
    const auto key = std::make_tuple(std::llround(q.pixel_a.x() * 1e4), std::llround(q.pixel_a.y() * 1e4),
                                     std::llround(q.pixel_b.x() * 1e4), std::llround(q.pixel_b.y() * 1e4));
    auto [it, inserted] = seen.try_emplace(key, out.pairs.size());
    if (inserted) {
      out.pairs.push_back(q);
    } else if (q.confidence > out.pairs[it->second].confidence) {
      out.pairs[it->second].confidence = q.confidence;
    }
  }
  return out;
}

ImageId SelectReferenceView(const Track& track, const SceneModel& model) {
  if (track.observations.empty()) Fail(ErrorCode::kInvalidArgument, "empty track");
  const Vec3& point = model.points.at(track.point_id);
  std::vector<std::pair<double, std::size_t>> depths;
  depths.reserve(track.observations.size());
  for (std::size_t i = 0; i < track.observations.size(); ++i) {
    const double z = model.Camera(track.observations[i].image).pose.Depth(point);
    if (!(z > 0.0)) Fail(ErrorCode::kCheiralityFailure, "non-positive depth in track");
    depths.emplace_back(z, i);
  }
  std::sort(depths.begin(), depths.end());
  return track.observations[depths[(depths.size() - 1) / 2].second].image;
}

TrackStats ComputeTrackStats(std::span<const Track> tracks) {
  TrackStats stats;
  for (const auto& t : tracks) {
    ++stats.count;
    stats.observations += t.size();
    ++stats.histogram[t.size()];
    for (const auto& obs : t.observations) ++stats.provenance[obs.provenance];
  }
  stats.mean_length =
      stats.count == 0 ? 0.0 : static_cast<double>(stats.observations) / stats.count;
  return stats;
}

TrackStats ComputeTrackStats(const SceneModel& model) {
  std::vector<Track> tracks;
  tracks.reserve(model.tracks.size());
  for (const auto& [id, t] : model.tracks) tracks.push_back(t);
  return ComputeTrackStats(tracks);
}

SceneModel TriangulateTracks(const std::map<ImageId, CameraView>& cameras,
                             std::span<const Track> tracks, TriangulationReport* report) {
  SceneModel model;
  model.cameras = cameras;
  TriangulationReport local;
  local.input_tracks = tracks.size();
  std::vector<PosedObservation> views;
  for (const auto& track : tracks) {
    Track kept = track;
    kept.observations.clear();
    for (const auto& obs : track.observations) {
      auto cam = cameras.find(obs.image);
      if (cam == cameras.end() || !InImage(obs.pixel, cam->second.intrinsics)) continue;
      kept.observations.push_back(obs);
    }
    if (kept.size() < 2) {
      ++local.too_short;
      continue;
    }
    views.clear();
    for (const auto& obs : kept.observations) {
      const auto& cam = cameras.at(obs.image);
      views.push_back({cam.pose, cam.intrinsics, obs.pixel});
    }
    try {
      const Vec3 point = Triangulate(views);
      std::erase_if(kept.observations, [&](const Observation& obs) {
        return !(cameras.at(obs.image).pose.Depth(point) > kMinDepth);
      });
      if (kept.size() < 2) {
        ++local.failed;
        continue;
      }
      kept.reference.reset();
      model.points[kept.point_id] = point;
      model.tracks[kept.point_id] = std::move(kept);
      ++local.triangulated;
    } catch (const Error&) {
      ++local.failed;
    }
  }
  if (report) *report = local;
  return model;
}

}  // namespace densesfm
