#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "densesfm/geometry.h"

namespace densesfm {

enum class Provenance : std::uint8_t { kMatched = 0, kExtended = 1, kRefined = 2 };

std::string_view ProvenanceName(Provenance p);
Provenance ParseProvenance(std::string_view name);

struct Observation {
  ImageId image = 0;
  Vec2 pixel = Vec2::Zero();
  Provenance provenance = Provenance::kMatched;
};

// One 3D point's observations, at most one per image.
struct Track {
  PointId point_id = 0;
  std::vector<Observation> observations;
  std::optional<ImageId> reference;

  bool HasImage(ImageId image) const;
  const Observation* Find(ImageId image) const;
  std::size_t size() const { return observations.size(); }
};

struct CameraView {
  CameraPose pose;
  CameraIntrinsics intrinsics;
  std::string name;
};

struct SceneModel {
  std::map<ImageId, CameraView> cameras;
  std::map<PointId, Vec3> points;
  std::map<PointId, Track> tracks;

  const CameraView& Camera(ImageId image) const;
  // Throws kInvalidArgument on any broken cross-reference, duplicated image
  // within a track, or observation outside its image.
  void Validate() const;
  PointId NextPointId() const;
};

// Mean reprojection error over all observations of all tracks (0 if none).
double MeanReprojectionError(const SceneModel& model);

}  // namespace densesfm
