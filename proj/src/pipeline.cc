#include "densesfm/pipeline.h"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "densesfm/colmap_io.h"
#include "densesfm/eval.h"
#include "densesfm/feature_io.h"
#include "densesfm/io_util.h"
#include "densesfm/parallel.h"
#include "densesfm/ply_io.h"
#include "densesfm/splatvis.h"

namespace densesfm {

namespace fs = std::filesystem;

namespace {

std::vector<double> ParseList(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    KeyValues kv;
    kv.Set(key, item);
    out.push_back(kv.GetDouble(key, 0.0));
  }
  if (out.empty()) Fail(ErrorCode::kConfigInvalid, "empty list for '" + key + "'");
  return out;
}

std::string FormatList(const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + FormatDouble(values[i]);
  return s;
}

const std::set<std::string>& KnownKeys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const KeyValues defaults = PipelineConfig().ToKeyValues();
    for (const auto& [key, v] : defaults.values()) k.insert(key);
    return k;
  }();
  return keys;
}

}  // namespace

PipelineConfig PipelineConfig::FromKeyValues(const KeyValues& kv) {
  kv.RequireKnown(KnownKeys());
  PipelineConfig c;
  c.eps_p = kv.GetDouble("eps_p", c.eps_p);
  c.nms.radius = kv.GetDouble("nms_radius", c.nms.radius);
  c.nms.min_confidence = kv.GetDouble("nms_min_confidence", c.nms.min_confidence);
  c.quantize_r = kv.GetDouble("quantize_r", c.quantize_r);
  c.skip_extend = kv.GetBool("skip_extend", c.skip_extend);
  c.extend.visibility.eps_v = kv.GetDouble("eps_v", c.extend.visibility.eps_v);
  c.extend.visibility.footprint_sigmas = kv.GetDouble("footprint_sigmas", c.extend.visibility.footprint_sigmas);
  c.extend.visibility.min_alpha = kv.GetDouble("min_alpha", c.extend.visibility.min_alpha);
  c.extend.visibility.sfm_points_occlude = kv.GetBool("sfm_points_occlude", c.extend.visibility.sfm_points_occlude);
  c.extend.epi_thresh = kv.GetDouble("epi_thresh", c.extend.epi_thresh);
  c.refine.patch_size = static_cast<int>(kv.GetInt("p", c.refine.patch_size));
  c.refine.stride = kv.GetDouble("stride", c.refine.stride);
  c.refine.window = static_cast<int>(kv.GetInt("w", c.refine.window));
  c.refine.anchors = static_cast<int>(kv.GetInt("C", c.refine.anchors));
  c.refine.anchor_extent = kv.GetDouble("anchor_extent", c.refine.anchor_extent);
  c.refine.gp.tau = kv.GetDouble("tau", c.refine.gp.tau);
  c.refine.gp.eps = kv.GetDouble("kernel_eps", c.refine.gp.eps);
  c.refine.gp.noise_variance = kv.GetDouble("sigma_n2", c.refine.gp.noise_variance);
  c.refine.gp.num_freqs = static_cast<int>(kv.GetInt("num_freqs", c.refine.gp.num_freqs));
  c.refine.always_embed = kv.GetBool("always_embed", c.refine.always_embed);
  c.decoder.temperature = kv.GetDouble("temperature", c.decoder.temperature);
  c.decoder.anchor_extent = c.refine.anchor_extent;
  c.alpha = kv.GetDouble("alpha", c.alpha);
  c.ba.max_iterations = static_cast<int>(kv.GetInt("ba_max_iterations", c.ba.max_iterations));
  c.ba.function_tolerance = kv.GetDouble("ba_function_tolerance", c.ba.function_tolerance);
  c.ba.loss = ParseRobustLoss(kv.GetString("loss", std::string(RobustLossName(c.ba.loss))));
  c.ba.loss_scale = kv.GetDouble("loss_scale", c.ba.loss_scale);
  c.ba.refine_poses = kv.GetBool("refine_poses", c.ba.refine_poses);
  c.ba.refine_intrinsics = kv.GetBool("refine_intrinsics", c.ba.refine_intrinsics);
  c.ba.eps_f = kv.GetDouble("eps_f", c.ba.eps_f);
  c.iterations = static_cast<int>(kv.GetInt("iterations", c.iterations));
  c.threads = static_cast<int>(kv.GetInt("threads", c.threads));
  c.seed = kv.GetU64("seed", c.seed);
  c.features = kv.GetString("features", c.features);
  c.occluders = kv.GetString("occluders", c.occluders);
  c.gt = kv.GetString("gt", c.gt);
  c.gt_cloud = kv.GetString("gt_cloud", c.gt_cloud);
  if (kv.Has("cloud_thresholds")) c.cloud_thresholds = ParseList("cloud_thresholds", kv.GetString("cloud_thresholds", ""));
  if (kv.Has("auc_thresholds")) c.auc_thresholds = ParseList("auc_thresholds", kv.GetString("auc_thresholds", ""));

  if (!(c.eps_p > 0.0) || !(c.nms.radius > 0.0)) Fail(ErrorCode::kConfigInvalid, "eps_p and nms_radius must be > 0");
  if (c.quantize_r < 0.0) Fail(ErrorCode::kConfigInvalid, "quantize_r must be >= 0");
  if (!(c.extend.visibility.eps_v >= 0.0 && c.extend.visibility.eps_v < 1.0)) {
    Fail(ErrorCode::kConfigInvalid, "eps_v must be in [0, 1)");
  }
  if (c.refine.patch_size % 2 == 0 || c.refine.window % 2 == 0 || c.refine.window > c.refine.patch_size) {
    Fail(ErrorCode::kConfigInvalid, "p and w must be odd with w <= p");
  }
  if (c.refine.anchors < 1 || !(c.refine.anchor_extent > 0.0)) Fail(ErrorCode::kConfigInvalid, "bad anchor grid");
  if (c.iterations < 0) Fail(ErrorCode::kConfigInvalid, "iterations must be >= 0");
  if (c.threads < 1) Fail(ErrorCode::kConfigInvalid, "threads must be >= 1");
  c.ba.Validate();
  c.SetThreads(c.threads);
  return c;
}

KeyValues PipelineConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("eps_p", eps_p);
  kv.Set("nms_radius", nms.radius);
  kv.Set("nms_min_confidence", nms.min_confidence);
  kv.Set("quantize_r", quantize_r);
  kv.Set("skip_extend", skip_extend);
  kv.Set("eps_v", extend.visibility.eps_v);
  kv.Set("footprint_sigmas", extend.visibility.footprint_sigmas);
  kv.Set("min_alpha", extend.visibility.min_alpha);
  kv.Set("sfm_points_occlude", extend.visibility.sfm_points_occlude);
  kv.Set("epi_thresh", extend.epi_thresh);
  kv.Set("p", refine.patch_size);
  kv.Set("stride", refine.stride);
  kv.Set("w", refine.window);
  kv.Set("C", refine.anchors);
  kv.Set("anchor_extent", refine.anchor_extent);
  kv.Set("tau", refine.gp.tau);
  kv.Set("kernel_eps", refine.gp.eps);
  kv.Set("sigma_n2", refine.gp.noise_variance);
  kv.Set("num_freqs", refine.gp.num_freqs);
  kv.Set("always_embed", refine.always_embed);
  kv.Set("temperature", decoder.temperature);
  kv.Set("alpha", alpha);
  kv.Set("ba_max_iterations", ba.max_iterations);
  kv.Set("ba_function_tolerance", ba.function_tolerance);
  kv.Set("loss", std::string(RobustLossName(ba.loss)));
  kv.Set("loss_scale", ba.loss_scale);
  kv.Set("refine_poses", ba.refine_poses);
  kv.Set("refine_intrinsics", ba.refine_intrinsics);
  kv.Set("eps_f", ba.eps_f);
  kv.Set("iterations", iterations);
  kv.Set("threads", threads);
  kv.Set("seed", std::to_string(seed));
  kv.Set("features", features);
  kv.Set("occluders", occluders);
  kv.Set("gt", gt);
  kv.Set("gt_cloud", gt_cloud);
  kv.Set("cloud_thresholds", FormatList(cloud_thresholds));
  kv.Set("auc_thresholds", FormatList(auc_thresholds));
  return kv;
}

void PipelineConfig::SetThreads(int n) {
  threads = n;
  extend.threads = n;
  refine.threads = n;
}

std::vector<std::pair<ImageId, ImageId>> ListFieldPairs(const fs::path& matches_dir) {
  if (!fs::is_directory(matches_dir)) {
    Fail(ErrorCode::kIo, "match directory " + matches_dir.string() + " does not exist");
  }
  static const std::regex stem(R"((\d+)_(\d+)\.dmf)");
  std::vector<std::pair<ImageId, ImageId>> pairs;
  for (const auto& entry : fs::directory_iterator(matches_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, stem)) continue;
    const auto a = static_cast<ImageId>(std::stoul(m[1]));
    const auto b = static_cast<ImageId>(std::stoul(m[2]));
    if (a < b && fs::exists(matches_dir / (PairStem(b, a) + ".dmf"))) pairs.emplace_back(a, b);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::vector<SparseMatchSet> VerifyMatches(const fs::path& matches_dir, const PipelineConfig& cfg,
                                          VerifyReport* report) {
  const auto pairs = ListFieldPairs(matches_dir);
  std::vector<SparseMatchSet> kept(pairs.size());
  std::vector<std::size_t> sampled(pairs.size(), 0);
  ParallelFor(pairs.size(), cfg.threads, [&](std::size_t i) {
    const auto [a, b] = pairs[i];
    const MatchField ab = ReadDenseField(matches_dir / (PairStem(a, b) + ".dmf"), a, b);
    const MatchField ba = ReadDenseField(matches_dir / (PairStem(b, a) + ".dmf"), b, a);
    const SparseMatchSet samples = NmsSample(ab, cfg.nms);
    sampled[i] = samples.pairs.size();
    kept[i] = MutualVerify(ab, ba, samples, cfg.eps_p);
  });
  VerifyReport rep;
  rep.pairs = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rep.sampled += sampled[i];
    rep.kept += kept[i].pairs.size();
  }
  spdlog::info("verify: {} pairs, {} of {} samples kept", rep.pairs, rep.kept, rep.sampled);
  if (report) *report = rep;
  return kept;
}

void WriteVerified(const fs::path& dir, const std::vector<SparseMatchSet>& sets) {
  fs::create_directories(dir);
  for (const auto& s : sets) WriteMatchText(dir / (PairStem(s.image_a, s.image_b) + ".txt"), s);
}

std::vector<SparseMatchSet> ReadVerified(const fs::path& dir) {
  if (!fs::is_directory(dir)) Fail(ErrorCode::kIo, "verified match directory " + dir.string() + " does not exist");
  static const std::regex stem(R"((\d+)_(\d+)\.txt)");
  std::vector<std::pair<std::pair<ImageId, ImageId>, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, stem)) continue;
    files.push_back({{static_cast<ImageId>(std::stoul(m[1])), static_cast<ImageId>(std::stoul(m[2]))},
                     entry.path()});
  }
  std::sort(files.begin(), files.end());
  std::vector<SparseMatchSet> sets;
  for (const auto& [pair, path] : files) sets.push_back(ReadMatchText(path));
  return sets;
}

SceneModel TriangulateStage(const SceneModel& cameras, const std::vector<SparseMatchSet>& verified,
                            const PipelineConfig& cfg, TriangulationReport* report) {
  std::vector<SparseMatchSet> sets = verified;
  if (cfg.quantize_r > 0.0) {
    for (auto& s : sets) s = QuantizeMatches(s, cfg.quantize_r);
  }
  const std::vector<Track> tracks = BuildTracks(sets);
  TriangulationReport rep;
  SceneModel model = TriangulateTracks(cameras.cameras, tracks, &rep);
  spdlog::info("triangulate: {} tracks, {} points, {} too short, {} failed", rep.input_tracks,
               rep.triangulated, rep.too_short, rep.failed);
  if (report) *report = rep;
  return model;
}

SceneModel ExtendStage(const SceneModel& model, const PipelineConfig& cfg, ExtendReport* report) {
  GaussianSet set = InitGaussians(model);
  if (!cfg.occluders.empty()) {
    for (const auto& g : ReadGaussiansPly(cfg.occluders)) set.AddOccluder(g);
  }
  ExtendReport rep;
  SceneModel out = ExtendTracks(model, set, cfg.extend, &rep);
  spdlog::info("extend: {} candidates, {} added, {} occluded, {} epipolar-rejected", rep.candidates,
               rep.added, rep.occluded, rep.epipolar_rejected);
  if (report) *report = rep;
  return out;
}

SceneModel RefineStage(const SceneModel& model, const FeatureProvider& provider,
                       const PipelineConfig& cfg, RefineReport* report) {
  ReferenceDecoder::Options opts = cfg.decoder;
  opts.anchor_extent = cfg.refine.anchor_extent;
  const ReferenceDecoder decoder(opts);
  RefineReport rep;
  SceneModel out = RefineTracks(model, provider, decoder, cfg.refine, &rep);
  spdlog::info("refine: {} tracks refined, {} skipped", rep.refined, rep.skipped);
  for (const auto& d : rep.diagnostics) spdlog::debug("refine: {}", d);
  if (report) *report = std::move(rep);
  return out;
}

SceneModel BaStage(const SceneModel& model, const PipelineConfig& cfg, BAReport* report) {
  BAReport rep;
  SceneModel out = FilterOutliers(BundleAdjust(model, cfg.ba, &rep), cfg.ba.eps_f);
  spdlog::info("ba: cost {} -> {} in {} iterations{}, {} points kept", rep.initial_cost,
               rep.final_cost, rep.iterations, rep.converged ? "" : " (not converged)",
               out.points.size());
  if (report) *report = std::move(rep);
  return out;
}

std::unique_ptr<FeatureImageProvider> LoadFeatures(const fs::path& dir, const SceneModel& model) {
  std::map<ImageId, FeatureImage> images;
  for (const auto& [image, view] : model.cameras) {
    images.emplace(image, ReadFeatureImage(dir / (std::to_string(image) + ".fpt")));
  }
  return std::make_unique<FeatureImageProvider>(std::move(images));
}

std::vector<Vec3> ModelCloud(const SceneModel& model) {
  std::vector<Vec3> cloud;
  cloud.reserve(model.points.size());
  for (const auto& [id, p] : model.points) cloud.push_back(p);
  return cloud;
}

std::map<std::string, double> EvaluateModel(const SceneModel& model, const PipelineConfig& cfg) {
  std::map<std::string, double> m;
  m["points"] = static_cast<double>(model.points.size());
  m["mean_reprojection_error"] = MeanReprojectionError(model);
  m["mean_track_length"] = ComputeTrackStats(model).mean_length;
  if (!cfg.gt.empty()) {
    const SceneModel gt = ReadColmapText(cfg.gt);
    const auto gt_poses = PosesOf(gt);
    std::map<ImageId, CameraPose> pred;
    for (const auto& [image, pose] : PosesOf(model)) {
      if (gt_poses.count(image)) pred.emplace(image, pose);
    }
    std::map<ImageId, CameraPose> gt_shared;
    for (const auto& [image, pose] : pred) gt_shared.emplace(image, gt_poses.at(image));
    const auto auc = PoseAuc(pred, gt_shared, cfg.auc_thresholds);
    for (std::size_t i = 0; i < auc.size(); ++i) {
      m["pose_auc@" + FormatDouble(cfg.auc_thresholds[i])] = auc[i];
    }
    if (!cfg.gt_cloud.empty() && !model.points.empty()) {
      const Similarity3 sim = AlignModels(model, gt_poses);
      std::vector<Vec3> cloud;
      for (const auto& p : ModelCloud(model)) cloud.push_back(sim.Apply(p));
      const auto gt_cloud = ReadPointCloudPly(cfg.gt_cloud);
      for (const auto& s : AccuracyCompleteness(cloud, gt_cloud, cfg.cloud_thresholds)) {
        m["accuracy@" + FormatDouble(s.threshold)] = s.accuracy;
        m["completeness@" + FormatDouble(s.threshold)] = s.completeness;
      }
    }
  }
  return m;
}

std::string FormatTrackStats(const std::string& stage, const TrackStats& stats) {
  std::ostringstream out;
  out << stage << " tracks=" << stats.count << " observations=" << stats.observations
      << " mean_length=" << FormatDouble(stats.mean_length);
  for (const auto& [p, n] : stats.provenance) out << ' ' << ProvenanceName(p) << '=' << n;
  out << " histogram=";
  bool first = true;
  for (const auto& [len, n] : stats.histogram) {
    out << (first ? "" : ",") << len << ':' << n;
    first = false;
  }
  out << '\n';
  return out.str();
}

namespace {

template <typename Fn>
auto RunStage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, std::string(ErrorCodeName(e.code())) + ": " + e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

SceneModel RunPipeline(const PipelineInputs& inputs, const PipelineConfig& cfg, const fs::path& out) {
  const SceneModel cameras = RunStage("ingest", [&] {
    for (const auto& p : {inputs.model, inputs.matches}) {
      if (p.empty() || !fs::exists(p)) throw StageError("ingest", "missing input " + p.string(), 2);
    }
    if (!cfg.features.empty() && !fs::exists(cfg.features)) {
      throw StageError("ingest", "missing input " + cfg.features, 2);
    }
    return ReadColmapText(inputs.model);
  });
  fs::create_directories(out);
  std::string stats;
  std::string ba_text;

  const auto verified = RunStage("verify", [&] {
    auto sets = VerifyMatches(inputs.matches, cfg);
    WriteVerified(out / "verified", sets);
    return sets;
  });
  SceneModel model = RunStage("triangulate", [&] { return TriangulateStage(cameras, verified, cfg); });
  stats += FormatTrackStats("triangulate", ComputeTrackStats(model));
  if (!cfg.skip_extend) {
    model = RunStage("extend", [&] { return ExtendStage(model, cfg); });
    stats += FormatTrackStats("extend", ComputeTrackStats(model));
  }
  if (cfg.iterations > 0) {
    if (cfg.features.empty()) throw StageError("refine", "no feature directory configured");
    const auto provider = RunStage("refine", [&] { return LoadFeatures(cfg.features, model); });
    for (int i = 0; i < cfg.iterations; ++i) {
      model = RunStage("refine", [&] { return RefineStage(model, *provider, cfg); });
      stats += FormatTrackStats("refine" + std::to_string(i + 1), ComputeTrackStats(model));
      BAReport rep;
      model = RunStage("ba", [&] { return BaStage(model, cfg, &rep); });
      ba_text += "# ba " + std::to_string(i + 1) + "\n" + rep.ToText();
      stats += FormatTrackStats("ba" + std::to_string(i + 1), ComputeTrackStats(model));
    }
  }

  RunStage("write", [&] {
    WriteColmapText(out / "model", model);
    WritePointCloudPly(out / "cloud.ply", ModelCloud(model));
    std::ofstream(out / "track_stats.txt") << stats;
    std::ofstream(out / "ba_report.txt") << ba_text;
    return 0;
  });
  RunStage("eval", [&] {
    WriteMetrics(out / "metrics.txt", EvaluateModel(model, cfg));
    return 0;
  });
  return model;
}

}  // namespace densesfm
