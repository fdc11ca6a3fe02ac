#include "densesfm/extend.h"

#include <memory>

#include "densesfm/parallel.h"

namespace densesfm {

namespace {

struct PointResult {
  std::vector<Observation> added;
  ExtendReport counts;
};

}  // namespace

SceneModel ExtendTracks(const SceneModel& model, const GaussianSet& set,
                        const ExtendOptions& options, ExtendReport* report) {
  std::vector<ImageId> images;
  std::vector<std::unique_ptr<SplatVisibility>> visibility;
  for (const auto& [image, cam] : model.cameras) {
    images.push_back(image);
    visibility.push_back(
        std::make_unique<SplatVisibility>(set, cam.pose, cam.intrinsics, options.visibility));
  }

  std::vector<const Track*> tracks;
  for (const auto& [id, track] : model.tracks) tracks.push_back(&track);
  std::vector<PointResult> results(tracks.size());

  ParallelFor(tracks.size(), options.threads, [&](std::size_t t) {
    const Track& track = *tracks[t];
    if (!set.Contains(track.point_id)) return;
    const Vec3& point = model.points.at(track.point_id);
    PointResult& out = results[t];
    for (std::size_t c = 0; c < images.size(); ++c) {
      const ImageId image = images[c];
      if (track.HasImage(image)) continue;
      ++out.counts.candidates;
      const auto& cam = model.cameras.at(image);
      const auto pixel = TryProject(point, cam.pose, cam.intrinsics);
      if (!pixel) {
        ++out.counts.behind_camera;
        continue;
      }
      if (!InImage(*pixel, cam.intrinsics)) {
        ++out.counts.out_of_image;
        continue;
      }
      if (!visibility[c]->Query(track.point_id).visible) {
        ++out.counts.occluded;
        continue;
      }
      bool consistent = true;
      for (const auto& obs : track.observations) {
        const auto& other = model.cameras.at(obs.image);
        try {
          if (EpipolarDistance(obs.pixel, *pixel, other.pose, cam.pose, other.intrinsics,
                               cam.intrinsics) > options.epi_thresh) {
            consistent = false;
          }
        } catch (const Error&) {
          consistent = false;
        }
        if (!consistent) break;
      }
      if (!consistent) {
        ++out.counts.epipolar_rejected;
        continue;
      }
      out.added.push_back({image, *pixel, Provenance::kExtended});
      ++out.counts.added;
    }
  });

  SceneModel extended = model;
  ExtendReport total;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    const auto& r = results[t];
    total.candidates += r.counts.candidates;
    total.behind_camera += r.counts.behind_camera;
    total.out_of_image += r.counts.out_of_image;
    total.occluded += r.counts.occluded;
    total.epipolar_rejected += r.counts.epipolar_rejected;
    total.added += r.counts.added;
    if (r.added.empty()) continue;
    auto& obs = extended.tracks.at(tracks[t]->point_id).observations;
    obs.insert(obs.end(), r.added.begin(), r.added.end());
  }
  if (report) *report = total;
  return extended;
}

}  // namespace densesfm
