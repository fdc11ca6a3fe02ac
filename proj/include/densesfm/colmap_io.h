#pragma once

#include <filesystem>

#include "densesfm/scene.h"

namespace densesfm {

// COLMAP text layout: cameras.txt (PINHOLE, one camera per image, camera id =
// image id), images.txt and points3D.txt. Per-observation provenance and the
// reference view go to a sidecar tracks_meta.txt that COLMAP ignores.
// Doubles are written in shortest round-trip form, so a read-back is exact.
void WriteColmapText(const std::filesystem::path& dir, const SceneModel& model);
SceneModel ReadColmapText(const std::filesystem::path& dir);

}  // namespace densesfm
