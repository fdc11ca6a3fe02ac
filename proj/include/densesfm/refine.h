#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "densesfm/scene.h"

namespace densesfm {

// p x p x c feature grid sampled around a keypoint. Row r, column c of the
// grid sits at center + stride * (c - h, r - h), h = (p - 1) / 2; features are
// stored one grid pixel per row, row-major over the grid.
struct FeaturePatch {
  ImageId view = 0;
  int size = 0;
  Vec2 center = Vec2::Zero();
  double stride = 1.0;
  Eigen::MatrixXd features;

  int channels() const { return static_cast<int>(features.cols()); }
  int half() const { return (size - 1) / 2; }
  // Throws kInvalidArgument if p is even, shapes disagree or values are not finite.
  void Validate() const;
};

// Posterior-mean coordinate embedding, one e-vector per reference grid pixel.
struct CoordEmbedding {
  int size = 0;
  Eigen::MatrixXd values;
};

// Decoder output for one query view. Logits are indexed [anchor][row][col]
// with anchor = anchor_row * C + anchor_col; conf is w x w and non-negative.
struct MatchOutput {
  int anchors = 0;
  int window = 0;
  std::vector<double> logits;
  Eigen::MatrixXd conf;

  double Logit(int anchor, int row, int col) const {
    return logits[(static_cast<std::size_t>(anchor) * window + row) * window + col];
  }
  double& Logit(int anchor, int row, int col) {
    return logits[(static_cast<std::size_t>(anchor) * window + row) * window + col];
  }
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  // Deterministic; safe for concurrent calls. Throws on failure.
  virtual FeaturePatch Extract(ImageId image, const Vec2& center, int size,
                               double stride) const = 0;
};

class Decoder {
 public:
  virtual ~Decoder() = default;
  // Deterministic; safe for concurrent calls. For reference-grid pixel (r, c)
  // the anchor lattice is centered on the query keypoint translated by that
  // pixel's offset from the reference keypoint.
  virtual MatchOutput Decode(const FeaturePatch& ref, const FeaturePatch& query,
                             const CoordEmbedding& embedding, int anchors,
                             int window) const = 0;
  // Decoders that ignore the embedding let the caller skip the GP solve.
  virtual bool UsesEmbedding() const { return true; }
};

// Dense H x W x C feature map with bilinear sampling.
class FeatureImage {
 public:
  FeatureImage() = default;
  FeatureImage(int width, int height, int channels);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }
  float* At(int x, int y) { return &data_[(static_cast<std::size_t>(y) * width_ + x) * channels_]; }
  const float* At(int x, int y) const {
    return &data_[(static_cast<std::size_t>(y) * width_ + x) * channels_];
  }

  // Throws kOutOfBounds outside [0, W-1] x [0, H-1].
  void Sample(const Vec2& p, double* out) const;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// Patch pixels falling outside the image either throw kOutOfBounds (kStrict)
// or take the nearest border value (kReplicate). The center must be inside.
enum class PatchBorder { kStrict, kReplicate };

class FeatureImageProvider : public FeatureProvider {
 public:
  explicit FeatureImageProvider(std::map<ImageId, FeatureImage> images,
                                PatchBorder border = PatchBorder::kReplicate);
  FeaturePatch Extract(ImageId image, const Vec2& center, int size, double stride) const override;

 private:
  std::map<ImageId, FeatureImage> images_;
  PatchBorder border_;
};

// [sin(2^k pi x), cos(2^k pi x), sin(2^k pi y), cos(2^k pi y)] for k < num_freqs.
Eigen::VectorXd PositionalEncoding(const Vec2& coord, int num_freqs);
// Encodings of every grid pixel of a p x p patch, coordinates in [-1, 1].
Eigen::MatrixXd PatchEncoding(int size, int num_freqs);

double CosineKernel(const Eigen::Ref<const Eigen::VectorXd>& fa,
                    const Eigen::Ref<const Eigen::VectorXd>& fb, double tau, double eps);

struct GpOptions {
  double tau = 10.0;
  double eps = 1e-6;
  // sigma_n^2
  double noise_variance = 0.1;
  int num_freqs = 8;
};

// mu = K^{RQ} (K^{QQ} + sigma_n^2 I)^{-1} chi^Q. Throws kSingularSystem when
// the regularized system cannot be factored.
CoordEmbedding GpPosteriorMean(const FeaturePatch& ref, const FeaturePatch& query,
                               const GpOptions& options);

// Anchor a of a C x C lattice tiling a square of side `extent` centered at 0.
Vec2 AnchorCoordinate(int anchor, int anchors, double extent);

// Correlation decoder standing in for a learned one. Transformed features are
// the raw features; the embedding is accepted but not consumed.
class ReferenceDecoder : public Decoder {
 public:
  struct Options {
    double anchor_extent = 7.0;
    double temperature = 50.0;
  };

  ReferenceDecoder() = default;
  explicit ReferenceDecoder(const Options& options) : options_(options) {}

  MatchOutput Decode(const FeaturePatch& ref, const FeaturePatch& query,
                     const CoordEmbedding& embedding, int anchors, int window) const override;
  bool UsesEmbedding() const override { return false; }

 private:
  Options options_;
};

struct TrackRegression {
  int ref_row = 0;
  int ref_col = 0;
  // Reference move in grid units, (col, row) - window center.
  Vec2 ref_offset = Vec2::Zero();
  // Per query view, expected anchor coordinate in pixels.
  std::vector<Vec2> query_offsets;
};

TrackRegression RegressTrack(std::span<const MatchOutput> outputs, double anchor_extent);

struct RefineOptions {
  int patch_size = 15;
  double stride = 1.0;
  int window = 7;
  int anchors = 7;
  double anchor_extent = 7.0;
  GpOptions gp;
  // Solve the GP even for decoders that do not read it.
  bool always_embed = false;
  int threads = 1;
};

struct RefineReport {
  std::size_t refined = 0;
  std::size_t skipped = 0;
  std::vector<std::string> diagnostics;
};

// Refines every track with >= 2 observations; topology is preserved and all
// refined observations get provenance `refined`. Tracks whose provider or
// decoder fails, or whose refined pixels leave the image, are left unchanged
// and reported.
SceneModel RefineTracks(const SceneModel& model, const FeatureProvider& provider,
                        const Decoder& decoder, const RefineOptions& options,
                        RefineReport* report = nullptr);

struct LossTerm {
  Vec2 predicted;
  Vec2 ground_truth;
  double confidence = 1.0;
};

struct LossGradient {
  std::vector<Vec2> d_predicted;
  std::vector<double> d_confidence;
};

// (1/N) sum s * |p - p_gt| - alpha * log s. Throws kNonPositiveConfidence.
double ConfidenceLoss(std::span<const LossTerm> terms, double alpha,
                      LossGradient* gradient = nullptr);

}  // namespace densesfm
