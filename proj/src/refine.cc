#include "densesfm/refine.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "densesfm/parallel.h"
#include "densesfm/tracks.h"

namespace densesfm {

void FeaturePatch::Validate() const {
  if (size <= 0 || size % 2 == 0) Fail(ErrorCode::kInvalidArgument, "patch size must be odd");
  if (features.rows() != static_cast<Eigen::Index>(size) * size || features.cols() == 0) {
    Fail(ErrorCode::kInvalidArgument, "patch feature shape mismatch");
  }
  if (!features.allFinite()) Fail(ErrorCode::kInvalidArgument, "patch features not finite");
  if (!(stride > 0.0)) Fail(ErrorCode::kInvalidArgument, "patch stride must be > 0");
}

FeatureImage::FeatureImage(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels),
      data_(static_cast<std::size_t>(width) * height * channels, 0.0f) {
  if (width <= 0 || height <= 0 || channels <= 0) {
    Fail(ErrorCode::kInvalidArgument, "feature image dimensions must be positive");
  }
}

void FeatureImage::Sample(const Vec2& p, double* out) const {
  if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width_ - 1 && p.y() <= height_ - 1)) {
    Fail(ErrorCode::kOutOfBounds, "feature sample outside image");
  }
  const int x0 = std::min(static_cast<int>(p.x()), width_ - 2 < 0 ? 0 : width_ - 2);
  const int y0 = std::min(static_cast<int>(p.y()), height_ - 2 < 0 ? 0 : height_ - 2);
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const double fx = p.x() - x0;
  const double fy = p.y() - y0;
  const float* a = At(x0, y0);
  const float* b = At(x1, y0);
  const float* c = At(x0, y1);
  const float* d = At(x1, y1);
  for (int ch = 0; ch < channels_; ++ch) {
    out[ch] = (1 - fy) * ((1 - fx) * a[ch] + fx * b[ch]) + fy * ((1 - fx) * c[ch] + fx * d[ch]);
  }
}

FeatureImageProvider::FeatureImageProvider(std::map<ImageId, FeatureImage> images,
                                           PatchBorder border)
    : images_(std::move(images)), border_(border) {}

FeaturePatch FeatureImageProvider::Extract(ImageId image, const Vec2& center, int size,
                                           double stride) const {
  auto it = images_.find(image);
  if (it == images_.end()) {
    Fail(ErrorCode::kInvalidArgument, "no feature image for image " + std::to_string(image));
  }
  const FeatureImage& fi = it->second;
  FeaturePatch patch;
  patch.view = image;
  patch.size = size;
  patch.center = center;
  patch.stride = stride;
  patch.features.resize(static_cast<Eigen::Index>(size) * size, fi.channels());
  const int h = (size - 1) / 2;
  Eigen::VectorXd buf(fi.channels());
  fi.Sample(center, buf.data());
  const Vec2 hi(fi.width() - 1, fi.height() - 1);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      Vec2 p = center + stride * Vec2(c - h, r - h);
      if (border_ == PatchBorder::kReplicate) p = p.cwiseMax(Vec2::Zero()).cwiseMin(hi);
      fi.Sample(p, buf.data());
      patch.features.row(r * size + c) = buf.transpose();
    }
  }
  patch.Validate();
  return patch;
}

Eigen::VectorXd PositionalEncoding(const Vec2& coord, int num_freqs) {
  Eigen::VectorXd e(4 * num_freqs);
  for (int k = 0; k < num_freqs; ++k) {
    const double f = std::ldexp(std::numbers::pi, k);
    e[4 * k + 0] = std::sin(f * coord.x());
    e[4 * k + 1] = std::cos(f * coord.x());
    e[4 * k + 2] = std::sin(f * coord.y());
    e[4 * k + 3] = std::cos(f * coord.y());
  }
  return e;
}

Eigen::MatrixXd PatchEncoding(int size, int num_freqs) {
  const int h = (size - 1) / 2;
  Eigen::MatrixXd chi(static_cast<Eigen::Index>(size) * size, 4 * num_freqs);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Vec2 coord = h == 0 ? Vec2::Zero()
                                : Vec2(static_cast<double>(c - h) / h, static_cast<double>(r - h) / h);
      chi.row(r * size + c) = PositionalEncoding(coord, num_freqs).transpose();
    }
  }
  return chi;
}

double CosineKernel(const Eigen::Ref<const Eigen::VectorXd>& fa,
                    const Eigen::Ref<const Eigen::VectorXd>& fb, double tau, double eps) {
  const double cosine = fa.dot(fb) / std::sqrt(fa.squaredNorm() * fb.squaredNorm() + eps);
  return std::exp(-tau) * std::exp(tau * cosine);
}

namespace {

Eigen::MatrixXd KernelMatrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tau,
                             double eps) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd k = a * b.transpose();
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      k(i, j) = std::exp(-tau) * std::exp(tau * k(i, j) / std::sqrt(na[i] * nb[j] + eps));
    }
  }
  return k;
}

}  // namespace

CoordEmbedding GpPosteriorMean(const FeaturePatch& ref, const FeaturePatch& query,
                               const GpOptions& options) {
  ref.Validate();
  query.Validate();
  if (ref.size != query.size || ref.channels() != query.channels()) {
    Fail(ErrorCode::kInvalidArgument, "reference and query patches differ in shape");
  }
  if (!(options.noise_variance >= 0.0)) Fail(ErrorCode::kInvalidArgument, "sigma_n must be >= 0");

  const Eigen::MatrixXd k_rq = KernelMatrix(ref.features, query.features, options.tau, options.eps);
  Eigen::MatrixXd k_qq = KernelMatrix(query.features, query.features, options.tau, options.eps);
  k_qq.diagonal().array() += options.noise_variance;

  const Eigen::LLT<Eigen::MatrixXd> llt(k_qq);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) {
    Fail(ErrorCode::kSingularSystem, "query kernel matrix is singular");
  }
  CoordEmbedding out;
  out.size = ref.size;
  out.values = k_rq * llt.solve(PatchEncoding(query.size, options.num_freqs));
  return out;
}

Vec2 AnchorCoordinate(int anchor, int anchors, double extent) {
  const double cell = extent / anchors;
  const double mid = 0.5 * (anchors - 1);
  return Vec2((anchor % anchors - mid) * cell, (anchor / anchors - mid) * cell);
}

namespace {

// Bilinear lookup on the patch grid, clamped to its border.
Eigen::VectorXd SamplePatch(const FeaturePatch& patch, double gx, double gy) {
  const int p = patch.size;
  gx = std::clamp(gx, 0.0, p - 1.0);
  gy = std::clamp(gy, 0.0, p - 1.0);
  const int x0 = std::min(static_cast<int>(gx), std::max(p - 2, 0));
  const int y0 = std::min(static_cast<int>(gy), std::max(p - 2, 0));
  const int x1 = std::min(x0 + 1, p - 1);
  const int y1 = std::min(y0 + 1, p - 1);
  const double fx = gx - x0;
  const double fy = gy - y0;
  const auto& f = patch.features;
  return ((1 - fy) * ((1 - fx) * f.row(y0 * p + x0) + fx * f.row(y0 * p + x1)) +
          fy * ((1 - fx) * f.row(y1 * p + x0) + fx * f.row(y1 * p + x1)))
      .transpose();
}

double Cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::sqrt(a.squaredNorm() * b.squaredNorm());
  return denom > 1e-300 ? a.dot(b) / denom : 0.0;
}

}  // namespace

MatchOutput ReferenceDecoder::Decode(const FeaturePatch& ref, const FeaturePatch& query,
                                     const CoordEmbedding& /*embedding*/, int anchors,
                                     int window) const {
  ref.Validate();
  query.Validate();
  if (ref.channels() != query.channels()) {
    Fail(ErrorCode::kInvalidArgument, "reference and query channels differ");
  }
  if (anchors <= 0 || window <= 0 || window % 2 == 0 || window > ref.size) {
    Fail(ErrorCode::kInvalidArgument, "bad anchor or window size");
  }
  MatchOutput out;
  out.anchors = anchors;
  out.window = window;
  out.logits.assign(static_cast<std::size_t>(anchors) * anchors * window * window, 0.0);
  out.conf = Eigen::MatrixXd::Zero(window, window);

  const int h = ref.half();
  const int hw = (window - 1) / 2;
  const int qh = query.half();
  const int n = anchors * anchors;
  for (int row = 0; row < window; ++row) {
    for (int col = 0; col < window; ++col) {
      const int dr = row - hw;
      const int dc = col - hw;
      const Eigen::VectorXd fr = ref.features.row((h + dr) * ref.size + h + dc).transpose();
      double lo = 1e300, hi = -1e300, sum = 0.0;
      for (int a = 0; a < n; ++a) {
        const Vec2 offset = Vec2(dc, dr) * ref.stride + AnchorCoordinate(a, anchors, options_.anchor_extent);
        const Eigen::VectorXd fq =
            SamplePatch(query, qh + offset.x() / query.stride, qh + offset.y() / query.stride);
        const double logit = options_.temperature * Cosine(fr, fq);
        out.Logit(a, row, col) = logit;
        lo = std::min(lo, logit);
        hi = std::max(hi, logit);
        sum += logit;
      }
      out.conf(row, col) = hi == lo ? 0.0 : std::max(0.0, hi - sum / n);
    }
  }
  return out;
}

TrackRegression RegressTrack(std::span<const MatchOutput> outputs, double anchor_extent) {
  if (outputs.empty()) Fail(ErrorCode::kInvalidArgument, "regression needs a query view");
  const int w = outputs.front().window;
  const int anchors = outputs.front().anchors;
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(w, w);
  for (const auto& o : outputs) {
    if (o.window != w || o.anchors != anchors) {
      Fail(ErrorCode::kInvalidArgument, "decoder outputs differ in shape");
    }
    total += o.conf;
  }
  TrackRegression result;
  double best = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < w; ++r) {
    for (int c = 0; c < w; ++c) {
      if (total(r, c) > best) {
        best = total(r, c);
        result.ref_row = r;
        result.ref_col = c;
      }
    }
  }
  const int hw = (w - 1) / 2;
  result.ref_offset = Vec2(result.ref_col - hw, result.ref_row - hw);

  const int n = anchors * anchors;
  std::vector<double> prob(n);
  for (const auto& o : outputs) {
    double top = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) top = std::max(top, o.Logit(a, result.ref_row, result.ref_col));
    double z = 0.0;
    for (int a = 0; a < n; ++a) {
      prob[a] = std::exp(o.Logit(a, result.ref_row, result.ref_col) - top);
      z += prob[a];
    }
    Vec2 mean = Vec2::Zero();
    for (int a = 0; a < n; ++a) mean += (prob[a] / z) * AnchorCoordinate(a, anchors, anchor_extent);
    result.query_offsets.push_back(mean);
  }
  return result;
}

namespace {

struct TrackOutcome {
  bool refined = false;
  std::vector<Observation> observations;
  ImageId reference = 0;
  std::string diagnostic;
};

TrackOutcome RefineOne(const SceneModel& model, const Track& track,
                       const FeatureProvider& provider, const Decoder& decoder,
                       const RefineOptions& options) {
  TrackOutcome out;
  const ImageId ref_image = SelectReferenceView(track, model);
  const Observation* ref_obs = track.Find(ref_image);
  const FeaturePatch ref =
      provider.Extract(ref_image, ref_obs->pixel, options.patch_size, options.stride);

  std::vector<const Observation*> queries;
  std::vector<MatchOutput> outputs;
  for (const auto& obs : track.observations) {
    if (obs.image == ref_image) continue;
    const FeaturePatch query =
        provider.Extract(obs.image, obs.pixel, options.patch_size, options.stride);
    CoordEmbedding emb;
    if (options.always_embed || decoder.UsesEmbedding()) emb = GpPosteriorMean(ref, query, options.gp);
    outputs.push_back(decoder.Decode(ref, query, emb, options.anchors, options.window));
    queries.push_back(&obs);
  }
  const TrackRegression reg = RegressTrack(outputs, options.anchor_extent);
  const Vec2 shift = options.stride * reg.ref_offset;

  for (const auto& obs : track.observations) {
    Observation refined = obs;
    refined.provenance = Provenance::kRefined;
    if (obs.image == ref_image) {
      refined.pixel = obs.pixel + shift;
    } else {
      const auto q = std::find(queries.begin(), queries.end(), &obs) - queries.begin();
      refined.pixel = obs.pixel + shift + reg.query_offsets[q];
    }
    if (!InImage(refined.pixel, model.Camera(obs.image).intrinsics)) {
      out.diagnostic = "refined pixel leaves image " + std::to_string(obs.image);
      return out;
    }
    out.observations.push_back(refined);
  }
  out.refined = true;
  out.reference = ref_image;
  return out;
}

}  // namespace

SceneModel RefineTracks(const SceneModel& model, const FeatureProvider& provider,
                        const Decoder& decoder, const RefineOptions& options,
                        RefineReport* report) {
  std::vector<const Track*> tracks;
  for (const auto& [id, track] : model.tracks) {
    if (track.size() >= 2) tracks.push_back(&track);
  }
  std::vector<TrackOutcome> outcomes(tracks.size());
  ParallelFor(tracks.size(), options.threads, [&](std::size_t i) {
    try {
      outcomes[i] = RefineOne(model, *tracks[i], provider, decoder, options);
    } catch (const Error& e) {
      outcomes[i].diagnostic = std::string(ErrorCodeName(e.code())) + ": " + e.what();
    }
  });

  SceneModel refined = model;
  RefineReport total;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const PointId id = tracks[i]->point_id;
    if (!outcomes[i].refined) {
      ++total.skipped;
      total.diagnostics.push_back("point " + std::to_string(id) + ": " + outcomes[i].diagnostic);
      continue;
    }
    ++total.refined;
    Track& t = refined.tracks.at(id);
    t.observations = std::move(outcomes[i].observations);
    t.reference = outcomes[i].reference;
  }
  if (report) *report = std::move(total);
  return refined;
}

double ConfidenceLoss(std::span<const LossTerm> terms, double alpha, LossGradient* gradient) {
  if (gradient) {
    gradient->d_predicted.assign(terms.size(), Vec2::Zero());
    gradient->d_confidence.assign(terms.size(), 0.0);
  }
  if (terms.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(terms.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    if (!(t.confidence > 0.0)) {
      Fail(ErrorCode::kNonPositiveConfidence, "confidence must be > 0");
    }
    const Vec2 diff = t.predicted - t.ground_truth;
    const double d = diff.norm();
    loss += t.confidence * d - alpha * std::log(t.confidence);
    if (gradient) {
      // Subgradient 0 at d = 0.
      if (d > 0.0) gradient->d_predicted[i] = inv_n * t.confidence / d * diff;
      gradient->d_confidence[i] = inv_n * (d - alpha / t.confidence);
    }
  }
  return loss * inv_n;
}

}  // namespace densesfm
