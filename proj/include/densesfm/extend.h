#pragma once

#include "densesfm/scene.h"
#include "densesfm/splatvis.h"

namespace densesfm {

struct ExtendOptions {
  VisibilityOptions visibility;
  // Sampson distance gate against every existing observation, pixels.
  double epi_thresh = 4.0;
  int threads = 1;
};

struct ExtendReport {
  std::size_t candidates = 0;
  std::size_t behind_camera = 0;
  std::size_t out_of_image = 0;
  std::size_t occluded = 0;
  std::size_t epipolar_rejected = 0;
  std::size_t added = 0;
};

// Projects every point into each camera absent from its track and appends an
// `extended` observation where the splat visibility test and the epipolar
// gate both pass. Existing observations and point positions are untouched.
SceneModel ExtendTracks(const SceneModel& model, const GaussianSet& set,
                        const ExtendOptions& options, ExtendReport* report = nullptr);

}  // namespace densesfm
