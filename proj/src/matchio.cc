#include "densesfm/matchio.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "densesfm/io_util.h"

namespace densesfm {

MatchField::MatchField(ImageId image_a, ImageId image_b, int width, int height)
    : image_a_(image_a),
      image_b_(image_b),
      width_(width),
      height_(height),
      data_(static_cast<std::size_t>(width) * height * kChannels, 0.0f) {
  if (width < 0 || height < 0) Fail(ErrorCode::kInvalidArgument, "negative field size");
}

std::size_t MatchField::Index(int x, int y) const {
  return (static_cast<std::size_t>(y) * width_ + x) * kChannels;
}

Vec2 MatchField::Flow(int x, int y) const {
  const std::size_t i = Index(x, y);
  return Vec2(data_[i], data_[i + 1]);
}

double MatchField::Confidence(int x, int y) const { return data_[Index(x, y) + 2]; }

void MatchField::Set(int x, int y, const Vec2& target, double confidence) {
  const std::size_t i = Index(x, y);
  data_[i] = static_cast<float>(target.x());
  data_[i + 1] = static_cast<float>(target.y());
  data_[i + 2] = static_cast<float>(confidence);
}

void MatchField::Validate(int width_b, int height_b) const {
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const double c = Confidence(x, y);
      if (!std::isfinite(c) || c < 0.0 || c > 1.0) {
        Fail(ErrorCode::kInvalidArgument, "confidence outside [0,1]");
      }
      if (c == 0.0) continue;
      const Vec2 f = Flow(x, y);
      if (!f.allFinite() || f.x() < -1.0 || f.y() < -1.0 || f.x() > width_b ||
          f.y() > height_b) {
        Fail(ErrorCode::kInvalidArgument, "flow target outside image B");
      }
    }
  }
}

SparseMatchSet NmsSample(const MatchField& field, const NmsOptions& options) {
  if (options.radius < 1.0) Fail(ErrorCode::kInvalidArgument, "NMS radius must be >= 1");
  const int w = field.width();
  const int h = field.height();

  std::vector<int> candidates;
  for (int i = 0; i < w * h; ++i) {
    if (field.Confidence(i % w, i / w) > options.min_confidence) candidates.push_back(i);
  }
  // Row-major index order is the lexicographic (row, col) tie-break.
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return field.Confidence(a % w, a / w) > field.Confidence(b % w, b / w);
  });

  const int r = static_cast<int>(std::floor(options.radius));
  const double r2 = options.radius * options.radius;
  std::vector<char> suppressed(static_cast<std::size_t>(w) * h, 0);
  std::vector<int> kept;
  for (int idx : candidates) {
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    const int cx = idx % w;
    const int cy = idx / w;
    for (int dy = -r; dy <= r; ++dy) {
      const int y = cy + dy;
      if (y < 0 || y >= h) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int x = cx + dx;
        if (x < 0 || x >= w) continue;
        if (dx * dx + dy * dy <= r2) suppressed[y * w + x] = 1;
      }
    }
  }
  std::sort(kept.begin(), kept.end());

  SparseMatchSet out;
  out.image_a = field.image_a();
  out.image_b = field.image_b();
  out.width_a = w;
  out.height_a = h;
  out.pairs.reserve(kept.size());
  for (int idx : kept) {
    const int x = idx % w;
    const int y = idx / w;
    out.pairs.push_back({Vec2(x, y), field.Flow(x, y), field.Confidence(x, y)});
  }
  return out;
}

namespace {

struct Bilinear {
  int x0, y0, x1, y1;
  double wx, wy;
};

std::optional<Bilinear> BilinearCell(const MatchField& field, const Vec2& p) {
  if (!p.allFinite() || p.x() < 0.0 || p.y() < 0.0 || p.x() > field.width() - 1.0 ||
      p.y() > field.height() - 1.0) {
    return std::nullopt;
  }
  Bilinear b;
  b.x0 = static_cast<int>(std::floor(p.x()));
  b.y0 = static_cast<int>(std::floor(p.y()));
  b.x1 = std::min(b.x0 + 1, field.width() - 1);
  b.y1 = std::min(b.y0 + 1, field.height() - 1);
  b.wx = p.x() - b.x0;
  b.wy = p.y() - b.y0;
  return b;
}

Vec2 Interpolate(const MatchField& field, const Bilinear& b) {
  return (1.0 - b.wy) * ((1.0 - b.wx) * field.Flow(b.x0, b.y0) + b.wx * field.Flow(b.x1, b.y0)) +
         b.wy * ((1.0 - b.wx) * field.Flow(b.x0, b.y1) + b.wx * field.Flow(b.x1, b.y1));
}

}  // namespace

Vec2 LookupBilinear(const MatchField& field, const Vec2& p) {
  auto cell = BilinearCell(field, p);
  if (!cell) Fail(ErrorCode::kOutOfBounds, "lookup outside the match field");
  return Interpolate(field, *cell);
}

std::optional<double> CycleDistance(const MatchField& ba, const SparseMatch& match) {
  auto cell = BilinearCell(ba, match.pixel_b);
  if (!cell) return std::nullopt;
  return (match.pixel_a - Interpolate(ba, *cell)).norm();
}

SparseMatchSet MutualVerify(const MatchField& ab, const MatchField& ba,
                            const SparseMatchSet& samples, double eps_p) {
  if (ab.image_a() != ba.image_b() || ab.image_b() != ba.image_a() ||
      samples.image_a != ab.image_a() || samples.image_b != ab.image_b()) {
    Fail(ErrorCode::kPairMismatch, "forward/backward fields do not cover the same pair");
  }
  SparseMatchSet out = samples;
  out.pairs.clear();
  for (const auto& m : samples.pairs) {
    const auto d = CycleDistance(ba, m);
    if (d && *d <= eps_p) out.pairs.push_back(m);
  }
  return out;
}

std::string PairStem(ImageId a, ImageId b) {
  return std::to_string(a) + "_" + std::to_string(b);
}

void WriteMatchText(const std::filesystem::path& path, const SparseMatchSet& set) {
  std::ofstream out(path);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "#match-v1 " << set.image_a << ' ' << set.image_b << ' ' << set.width_a << ' '
      << set.height_a << '\n';
  for (const auto& m : set.pairs) {
    out << FormatDouble(m.pixel_a.x()) << ' ' << FormatDouble(m.pixel_a.y()) << ' '
        << FormatDouble(m.pixel_b.x()) << ' ' << FormatDouble(m.pixel_b.y()) << ' '
        << FormatDouble(m.confidence) << '\n';
  }
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

SparseMatchSet ReadMatchText(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) Fail(ErrorCode::kParse, "empty match file " + path.string());
  std::istringstream header(line);
  std::string magic;
  SparseMatchSet set;
  if (!(header >> magic >> set.image_a >> set.image_b >> set.width_a >> set.height_a) ||
      magic != "#match-v1") {
    Fail(ErrorCode::kParse, "bad match header in " + path.string());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    SparseMatch m;
    if (!(row >> m.pixel_a.x() >> m.pixel_a.y() >> m.pixel_b.x() >> m.pixel_b.y() >>
          m.confidence)) {
      Fail(ErrorCode::kParse, "bad match record in " + path.string());
    }
    set.pairs.push_back(m);
  }
  return set;
}

void WriteDenseField(const std::filesystem::path& path, const MatchField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write("DMF1", 4);
  WriteU32(out, static_cast<std::uint32_t>(field.width()));
  WriteU32(out, static_cast<std::uint32_t>(field.height()));
  WriteU32(out, MatchField::kChannels);
  for (float v : field.data()) WriteF32(out, v);
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

MatchField ReadDenseField(const std::filesystem::path& path, ImageId image_a, ImageId image_b) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DMF1", 4) != 0) {
    Fail(ErrorCode::kParse, "bad dense field magic in " + path.string());
  }
  const std::uint32_t w = ReadU32(in);
  const std::uint32_t h = ReadU32(in);
  const std::uint32_t c = ReadU32(in);
  if (c != MatchField::kChannels) Fail(ErrorCode::kParse, "dense field must have 3 channels");
  MatchField field(image_a, image_b, static_cast<int>(w), static_cast<int>(h));
  for (float& v : field.mutable_data()) v = ReadF32(in);
  if (!in) Fail(ErrorCode::kParse, "truncated dense field " + path.string());
  return field;
}

}  // namespace densesfm
