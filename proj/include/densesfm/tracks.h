#pragma once

#include <map>
#include <span>
#include <vector>

#include "densesfm/matchio.h"
#include "densesfm/scene.h"

namespace densesfm {

// Union-find over (image, pixel) nodes keyed at 1e-4 px. Edges are applied in
// input order; an edge that would put two distinct pixels of one image into a
// component is dropped. Every input node lands in exactly one track (tracks of
// length 1 included). Point ids are assigned 1..N in order of first node.
std::vector<Track> BuildTracks(std::span<const SparseMatchSet> matches);

// Snaps both keypoints of each match to an r-pixel grid and keeps the most
// confident match per (grid A, grid B) node pair.
SparseMatchSet QuantizeMatches(const SparseMatchSet& matches, double r);

// Image whose camera-frame depth of the point is the (lower) median.
ImageId SelectReferenceView(const Track& track, const SceneModel& model);

struct TrackStats {
  std::size_t count = 0;
  std::size_t observations = 0;
  double mean_length = 0.0;
  std::map<std::size_t, std::size_t> histogram;
  std::map<Provenance, std::size_t> provenance;
};

TrackStats ComputeTrackStats(const SceneModel& model);
TrackStats ComputeTrackStats(std::span<const Track> tracks);

struct TriangulationReport {
  std::size_t input_tracks = 0;
  std::size_t too_short = 0;
  std::size_t failed = 0;
  std::size_t triangulated = 0;
};

// Triangulates every track with >= 2 in-image observations against the given
// cameras; failures are dropped and counted. Point ids are preserved.
SceneModel TriangulateTracks(const std::map<ImageId, CameraView>& cameras,
                             std::span<const Track> tracks,
                             TriangulationReport* report = nullptr);

}  // namespace densesfm
