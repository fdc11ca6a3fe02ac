#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "densesfm/common.h"

namespace densesfm {

// Dense correspondence field from image A to image B. One record per integer
// pixel of A: sub-pixel target in B plus a confidence in [0, 1]. Pixels with
// zero confidence carry no correspondence.
class MatchField {
 public:
  static constexpr int kChannels = 3;

  MatchField() = default;
  MatchField(ImageId image_a, ImageId image_b, int width, int height);

  ImageId image_a() const { return image_a_; }
  ImageId image_b() const { return image_b_; }
  int width() const { return width_; }
  int height() const { return height_; }

  Vec2 Flow(int x, int y) const;
  double Confidence(int x, int y) const;
  void Set(int x, int y, const Vec2& target, double confidence);

  // Raw row-major (xb, yb, conf) float records, as stored on disk.
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& mutable_data() { return data_; }

  // Throws kInvalidArgument if a confident target leaves B padded by 1px or a
  // confidence is outside [0, 1].
  void Validate(int width_b, int height_b) const;

 private:
  std::size_t Index(int x, int y) const;

  ImageId image_a_ = 0;
  ImageId image_b_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

struct SparseMatch {
  Vec2 pixel_a;
  Vec2 pixel_b;
  double confidence = 0.0;
};

struct SparseMatchSet {
  ImageId image_a = 0;
  ImageId image_b = 0;
  int width_a = 0;
  int height_a = 0;
  std::vector<SparseMatch> pairs;
};

struct NmsOptions {
  double radius = 4.0;
  // Pixels need confidence strictly above this to be sampled.
  double min_confidence = 0.0;
};

// Greedy non-max suppression over the confidence channel. Candidates are
// visited by descending confidence, ties by (row, col); a candidate is kept
// unless a kept pixel lies within `radius` (Euclidean). Output is row-major.
SparseMatchSet NmsSample(const MatchField& field, const NmsOptions& options);

// Bilinear interpolation of the flow at a sub-pixel location of A.
Vec2 LookupBilinear(const MatchField& field, const Vec2& p);

// Keeps samples whose forward-backward cycle returns within eps_p of the
// start pixel. Targets outside the backward grid are rejected.
SparseMatchSet MutualVerify(const MatchField& ab, const MatchField& ba,
                            const SparseMatchSet& samples, double eps_p);

// Cycle distance |p_a - ba(p_b)|, or nullopt if p_b is outside the grid.
std::optional<double> CycleDistance(const MatchField& ba, const SparseMatch& match);

// File formats.
void WriteMatchText(const std::filesystem::path& path, const SparseMatchSet& set);
SparseMatchSet ReadMatchText(const std::filesystem::path& path);
void WriteDenseField(const std::filesystem::path& path, const MatchField& field);
MatchField ReadDenseField(const std::filesystem::path& path, ImageId image_a, ImageId image_b);

std::string PairStem(ImageId a, ImageId b);

}  // namespace densesfm
