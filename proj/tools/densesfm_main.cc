// Command-line driver: each stage runs standalone on serialized models, and
// `pipeline` chains them.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "densesfm/colmap_io.h"
#include "densesfm/eval.h"
#include "densesfm/pipeline.h"
#include "densesfm/synth.h"

namespace fs = std::filesystem;
using namespace densesfm;

namespace {

struct Options {
  std::string model;
  std::string matches;
  std::string out = "out";
  std::string config;
  std::string synth;
  std::vector<std::string> overrides;
  int threads = 0;
  long long seed = -1;
  int iterations = -1;
  bool skip_extend = false;
  bool fixed_poses = false;
  bool fixed_intrinsics = false;
};

void SetupLogging() {
  auto logger = spdlog::stderr_color_mt("densesfm");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("DENSESFM_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

PipelineConfig LoadConfig(const Options& o) {
  KeyValues kv;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw StageError("ingest", "missing input " + o.config, 2);
    kv = KeyValues::Load(o.config);
  }
  for (const auto& item : o.overrides) kv.Merge(KeyValues::Parse(item));
  if (o.seed >= 0) kv.Set("seed", std::to_string(o.seed));
  if (o.iterations >= 0) kv.Set("iterations", o.iterations);
  if (o.skip_extend) kv.Set("skip_extend", true);
  if (o.fixed_poses) kv.Set("refine_poses", false);
  if (o.fixed_intrinsics) kv.Set("refine_intrinsics", false);
  if (o.threads > 0) kv.Set("threads", o.threads);
  return PipelineConfig::FromKeyValues(kv);
}

SceneModel ReadModelArg(const Options& o) {
  if (o.model.empty() || !fs::exists(o.model)) {
    throw StageError("ingest", "missing input model '" + o.model + "'", 2);
  }
  return ReadColmapText(o.model);
}

void RequirePath(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) throw StageError("ingest", "missing " + what + " '" + path + "'", 2);
}

void WriteModelOut(const Options& o, const SceneModel& model, const std::string& stage) {
  fs::create_directories(o.out);
  WriteColmapText(fs::path(o.out) / "model", model);
  std::ofstream(fs::path(o.out) / "track_stats.txt") << FormatTrackStats(stage, ComputeTrackStats(model));
}

SynthConfig LoadSynth(const Options& o) {
  RequirePath(o.synth, "synth config");
  KeyValues kv = KeyValues::Load(o.synth);
  if (o.seed >= 0) kv.Set("seed", std::to_string(o.seed));
  return SynthConfig::FromKeyValues(kv);
}

template <typename Fn>
int Guard(const std::string& stage, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return e.exit_code();
  } catch (const Error& e) {
    std::cerr << "error [" << stage << "]: " << ErrorCodeName(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  SetupLogging();
  CLI::App app{"Dense-match structure-from-motion post-processing"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "COLMAP text model directory");
    sub->add_option("--matches", o.matches, "Match directory");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--config", o.config, "key = value config file");
    sub->add_option("--set", o.overrides, "Config override key=value")->take_all();
    sub->add_option("--threads", o.threads, "Worker threads");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--iterations", o.iterations, "Refine/BA iterations");
    sub->add_flag("--skip-extend", o.skip_extend, "Skip track extension");
    sub->add_flag("--fixed-poses", o.fixed_poses, "Hold camera poses fixed in BA");
    sub->add_flag("--fixed-intrinsics", o.fixed_intrinsics, "Hold intrinsics fixed in BA");
    sub->add_option("--synth", o.synth, "Synthetic scene config");
  };

  auto* verify = app.add_subcommand("verify", "NMS-sample and mutually verify dense fields");
  auto* triangulate = app.add_subcommand("triangulate", "Build tracks from verified matches and triangulate");
  auto* extend = app.add_subcommand("extend", "Extend tracks by splat visibility");
  auto* refine = app.add_subcommand("refine", "Refine track keypoints");
  auto* ba = app.add_subcommand("ba", "Bundle adjustment and outlier filtering");
  auto* eval = app.add_subcommand("eval", "Evaluate a model against ground truth");
  auto* synth = app.add_subcommand("synth", "Write a synthetic scene bundle");
  auto* pipeline = app.add_subcommand("pipeline", "Run all stages");
  auto* stats = app.add_subcommand("stats", "Print track statistics of a model");
  for (auto* sub : {verify, triangulate, extend, refine, ba, eval, synth, pipeline, stats}) common(sub);

  CLI11_PARSE(app, argc, argv);

  if (verify->parsed()) {
    return Guard("verify", [&] {
      const auto cfg = LoadConfig(o);
      RequirePath(o.matches, "match directory");
      WriteVerified(fs::path(o.out) / "verified", VerifyMatches(o.matches, cfg));
    });
  }
  if (triangulate->parsed()) {
    return Guard("triangulate", [&] {
      const auto cfg = LoadConfig(o);
      const SceneModel cameras = ReadModelArg(o);
      RequirePath(o.matches, "verified match directory");
      WriteModelOut(o, TriangulateStage(cameras, ReadVerified(o.matches), cfg), "triangulate");
    });
  }
  if (extend->parsed()) {
    return Guard("extend", [&] {
      const auto cfg = LoadConfig(o);
      WriteModelOut(o, ExtendStage(ReadModelArg(o), cfg), "extend");
    });
  }
  if (refine->parsed()) {
    return Guard("refine", [&] {
      const auto cfg = LoadConfig(o);
      const SceneModel model = ReadModelArg(o);
      RequirePath(cfg.features, "feature directory");
      const auto provider = LoadFeatures(cfg.features, model);
      WriteModelOut(o, RefineStage(model, *provider, cfg), "refine");
    });
  }
  if (ba->parsed()) {
    return Guard("ba", [&] {
      const auto cfg = LoadConfig(o);
      BAReport rep;
      WriteModelOut(o, BaStage(ReadModelArg(o), cfg, &rep), "ba");
      std::ofstream(fs::path(o.out) / "ba_report.txt") << rep.ToText();
    });
  }
  if (eval->parsed()) {
    return Guard("eval", [&] {
      const auto cfg = LoadConfig(o);
      const auto metrics = EvaluateModel(ReadModelArg(o), cfg);
      fs::create_directories(o.out);
      WriteMetrics(fs::path(o.out) / "metrics.txt", metrics);
      for (const auto& [k, v] : metrics) std::cout << k << " = " << v << '\n';
    });
  }
  if (synth->parsed()) {
    return Guard("synth", [&] {
      const auto cfg = LoadConfig(o);
      WriteSceneBundle(o.out, GenerateScene(LoadSynth(o)), cfg.threads);
    });
  }
  if (stats->parsed()) {
    return Guard("stats", [&] { std::cout << FormatTrackStats("model", ComputeTrackStats(ReadModelArg(o))); });
  }
  if (pipeline->parsed()) {
    return Guard("pipeline", [&] {
      PipelineConfig cfg = LoadConfig(o);
      PipelineInputs inputs{o.model, o.matches};
      if (!o.synth.empty()) {
        const fs::path scene_dir = fs::path(o.out) / "scene";
        WriteSceneBundle(scene_dir, GenerateScene(LoadSynth(o)), cfg.threads);
        inputs = {scene_dir / "input", scene_dir / "matches"};
        if (cfg.features.empty()) cfg.features = (scene_dir / "features").string();
        if (cfg.occluders.empty()) cfg.occluders = (scene_dir / "occluders.ply").string();
        if (cfg.gt.empty()) cfg.gt = (scene_dir / "gt").string();
        if (cfg.gt_cloud.empty()) cfg.gt_cloud = (scene_dir / "gt_cloud.ply").string();
      }
      RunPipeline(inputs, cfg, o.out);
    });
  }
  return 0;
}
