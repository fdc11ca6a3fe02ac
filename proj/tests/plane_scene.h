#pragma once

#include <map>
#include <numbers>

#include "densesfm/refine.h"
#include "scene_gen.h"

namespace densesfm::testing {

// Cameras looking at the textured plane z = 0 from z < 0.
struct PlaneScene {
  SceneModel model;
  std::map<ImageId, FeatureImage> images;

  Vec3 Hit(ImageId image, const Vec2& pixel) const {
    const auto& cam = model.Camera(image);
    const Vec3 c = cam.pose.Center();
    const Vec3 d = PixelRay(pixel, cam.pose, cam.intrinsics);
    return c - c.z() / d.z() * d;
  }
};

inline PlaneScene MakePlaneScene(Gen& gen, int cameras, int points) {
  PlaneScene s;
  const auto k = testing::Intrinsics(300.0, 200, 160);
  for (int i = 0; i < cameras; ++i) {
    const Vec3 c(gen.Uniform(-0.6, 0.6), gen.Uniform(-0.4, 0.4), -5.0 + gen.Uniform(-0.3, 0.3));
    s.model.cameras[i + 1] = {testing::LookAtPose(c, gen.Vec(-0.2, 0.2).cwiseProduct(Vec3(1, 1, 0))), k,
                              std::to_string(i + 1)};
  }
  const int channels = 12;
  std::vector<Vec3> freq(channels);
  std::vector<double> phase(channels);
  for (int ch = 0; ch < channels; ++ch) {
    const double a = gen.Uniform(0, 2 * std::numbers::pi);
    freq[ch] = gen.Uniform(20, 45) * Vec3(std::cos(a), std::sin(a), 0);
    phase[ch] = gen.Uniform(0, 2 * std::numbers::pi);
  }
  for (const auto& [id, cam] : s.model.cameras) {
    FeatureImage img(k.width, k.height, channels);
    for (int y = 0; y < k.height; ++y) {
      for (int x = 0; x < k.width; ++x) {
        const Vec3 p = s.Hit(id, Vec2(x, y));
        for (int ch = 0; ch < channels; ++ch) img.At(x, y)[ch] = static_cast<float>(std::sin(freq[ch].dot(p) + phase[ch]));
      }
    }
    s.images.emplace(id, std::move(img));
  }
  for (PointId id = 1; id <= static_cast<PointId>(points); ++id) {
    Vec3 p;
    Track t;
    t.point_id = id;
    do {
      p = Vec3(gen.Uniform(-0.8, 0.8), gen.Uniform(-0.6, 0.6), 0.0);
      t.observations.clear();
      for (const auto& [image, cam] : s.model.cameras) {
        const Vec2 uv = Project(p, cam.pose, cam.intrinsics);
        if (uv.x() > 12 && uv.y() > 12 && uv.x() < k.width - 13 && uv.y() < k.height - 13) {
          t.observations.push_back({image, uv});
        }
      }
    } while (t.size() < 2);
    s.model.points[id] = p;
    s.model.tracks[id] = t;
  }
  return s;
}

}  // namespace densesfm::testing
