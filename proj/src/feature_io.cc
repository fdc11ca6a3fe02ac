#include "densesfm/feature_io.h"

#include <fstream>

#include "densesfm/io_util.h"

namespace densesfm {

void WriteTensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::size_t count = 1;
  for (auto d : tensor.dims) count *= d;
  if (count != tensor.data.size()) Fail(ErrorCode::kInvalidArgument, "tensor dims do not match data");
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write("FPT1", 4);
  WriteU32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) WriteU32(out, d);
  for (float v : tensor.data) WriteF32(out, v);
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

Tensor ReadTensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "FPT1") Fail(ErrorCode::kParse, "not an FPT1 tensor: " + path.string());
  Tensor t;
  const std::uint32_t rank = ReadU32(in);
  if (!in || rank == 0 || rank > 8) Fail(ErrorCode::kParse, "bad tensor rank in " + path.string());
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.dims.push_back(ReadU32(in));
    count *= t.dims.back();
  }
  if (!in) Fail(ErrorCode::kParse, "truncated tensor header in " + path.string());
  t.data.resize(count);
  for (auto& v : t.data) v = ReadF32(in);
  if (!in) Fail(ErrorCode::kParse, "truncated tensor data in " + path.string());
  return t;
}

void WriteFeatureImage(const std::filesystem::path& path, const FeatureImage& image) {
  WriteTensor(path, {{static_cast<std::uint32_t>(image.height()),
                      static_cast<std::uint32_t>(image.width()),
                      static_cast<std::uint32_t>(image.channels())},
                     image.data()});
}

FeatureImage ReadFeatureImage(const std::filesystem::path& path) {
  Tensor t = ReadTensor(path);
  if (t.dims.size() != 3) Fail(ErrorCode::kParse, "feature image must be [H, W, C]");
  FeatureImage image(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]),
                     static_cast<int>(t.dims[2]));
  image.data() = std::move(t.data);
  return image;
}

FeaturePatch PatchFromTensor(const Tensor& tensor, ImageId view, const Vec2& center,
                             double stride) {
  if (tensor.dims.size() != 3 || tensor.dims[0] != tensor.dims[1]) {
    Fail(ErrorCode::kInvalidArgument, "feature patch tensor must be [p, p, c]");
  }
  FeaturePatch patch;
  patch.view = view;
  patch.size = static_cast<int>(tensor.dims[0]);
  patch.center = center;
  patch.stride = stride;
  const Eigen::Index pixels = static_cast<Eigen::Index>(patch.size) * patch.size;
  const Eigen::Index channels = tensor.dims[2];
  patch.features.resize(pixels, channels);
  for (Eigen::Index i = 0; i < pixels; ++i) {
    for (Eigen::Index c = 0; c < channels; ++c) patch.features(i, c) = tensor.data[i * channels + c];
  }
  patch.Validate();
  return patch;
}

}  // namespace densesfm
