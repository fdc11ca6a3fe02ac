#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "densesfm/refine.h"

namespace densesfm {

// Little-endian float tensor: "FPT1", u32 rank, u32 dims..., float32 data in
// row-major order.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void WriteTensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor ReadTensor(const std::filesystem::path& path);

// Feature images are [H, W, C] tensors.
void WriteFeatureImage(const std::filesystem::path& path, const FeatureImage& image);
FeatureImage ReadFeatureImage(const std::filesystem::path& path);

// A [p, p, c] tensor becomes a patch for the given view and keypoint.
FeaturePatch PatchFromTensor(const Tensor& tensor, ImageId view, const Vec2& center,
                             double stride);

}  // namespace densesfm
