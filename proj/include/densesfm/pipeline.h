#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "densesfm/config.h"
#include "densesfm/extend.h"
#include "densesfm/matchio.h"
#include "densesfm/optimize.h"
#include "densesfm/refine.h"
#include "densesfm/scene.h"
#include "densesfm/tracks.h"

namespace densesfm {

struct PipelineConfig {
  double eps_p = 3.0;
  NmsOptions nms{4.0, 0.0};
  // > 0 snaps keypoints to an r-pixel grid before track building.
  double quantize_r = 0.0;
  bool skip_extend = false;
  ExtendOptions extend;
  RefineOptions refine;
  ReferenceDecoder::Options decoder;
  // Weight of the log-confidence term of the training loss.
  double alpha = 20.0;
  BAConfig ba;
  int iterations = 2;
  int threads = 1;
  std::uint64_t seed = 7;
  std::string features;
  std::string occluders;
  std::string gt;
  std::string gt_cloud;
  std::vector<double> cloud_thresholds{0.005, 0.01, 0.02};
  std::vector<double> auc_thresholds{1.0, 3.0, 5.0};

  static PipelineConfig FromKeyValues(const KeyValues& kv);
  KeyValues ToKeyValues() const;
  // Thread count pushed into every stage.
  void SetThreads(int n);
};

// Error raised by a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message, int exit_code = 1)
      : std::runtime_error(message), stage_(std::move(stage)), exit_code_(exit_code) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

struct VerifyReport {
  std::size_t pairs = 0;
  std::size_t sampled = 0;
  std::size_t kept = 0;
};

// (a, b) with a < b for which both a_b.dmf and b_a.dmf exist, sorted.
std::vector<std::pair<ImageId, ImageId>> ListFieldPairs(const std::filesystem::path& matches_dir);

std::vector<SparseMatchSet> VerifyMatches(const std::filesystem::path& matches_dir,
                                          const PipelineConfig& cfg, VerifyReport* report = nullptr);
void WriteVerified(const std::filesystem::path& dir, const std::vector<SparseMatchSet>& sets);
std::vector<SparseMatchSet> ReadVerified(const std::filesystem::path& dir);

SceneModel TriangulateStage(const SceneModel& cameras, const std::vector<SparseMatchSet>& verified,
                            const PipelineConfig& cfg, TriangulationReport* report = nullptr);
SceneModel ExtendStage(const SceneModel& model, const PipelineConfig& cfg,
                       ExtendReport* report = nullptr);
SceneModel RefineStage(const SceneModel& model, const FeatureProvider& provider,
                       const PipelineConfig& cfg, RefineReport* report = nullptr);
// Bundle adjustment followed by outlier filtering.
SceneModel BaStage(const SceneModel& model, const PipelineConfig& cfg, BAReport* report = nullptr);

// Reads <dir>/<image>.fpt for every camera of the model.
std::unique_ptr<FeatureImageProvider> LoadFeatures(const std::filesystem::path& dir,
                                                   const SceneModel& model);

std::map<std::string, double> EvaluateModel(const SceneModel& model, const PipelineConfig& cfg);

std::string FormatTrackStats(const std::string& stage, const TrackStats& stats);

struct PipelineInputs {
  std::filesystem::path model;
  std::filesystem::path matches;
};

// verify -> triangulate -> extend -> iterations x (refine -> ba). Writes
// model/, cloud.ply, verified/, track_stats.txt, ba_report.txt and
// metrics.txt under `out`. Throws StageError.
SceneModel RunPipeline(const PipelineInputs& inputs, const PipelineConfig& cfg,
                       const std::filesystem::path& out);

// Point positions of a model in id order.
std::vector<Vec3> ModelCloud(const SceneModel& model);

}  // namespace densesfm
