#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "densesfm/scene.h"

namespace densesfm {

struct CloudScore {
  double threshold = 0.0;
  double accuracy = 0.0;      // % of predicted points within threshold of gt
  double completeness = 0.0;  // % of gt points within threshold of a prediction
};

// Exact nearest-neighbour tests via a uniform grid with cell size just above
// the largest threshold. Throws kEmptyCloud.
std::vector<CloudScore> AccuracyCompleteness(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                             std::span<const double> thresholds);

// Least-squares similarity mapping `from` onto `to` (Umeyama). Throws
// kDegenerateConfiguration for fewer than three or collinear points.
Similarity3 AlignPoints(std::span<const Vec3> from, std::span<const Vec3> to);

// Similarity taking the predicted camera centers onto the ground-truth ones,
// over the images both models share.
Similarity3 AlignModels(const SceneModel& pred, const std::map<ImageId, CameraPose>& gt);

// Per-image pose error in degrees after aligning pred to gt: the larger of
// the rotation angle error and atan(|c_pred - c_gt| / L), L being the RMS
// distance of the gt centers from their centroid. Throws kAlignmentFailure.
std::map<ImageId, double> PoseErrors(const std::map<ImageId, CameraPose>& pred,
                                     const std::map<ImageId, CameraPose>& gt);

// Area under the recall-vs-error curve up to each threshold, normalized by the
// threshold, in percent.
std::vector<double> AucFromErrors(std::vector<double> errors, std::span<const double> thresholds);

std::vector<double> PoseAuc(const std::map<ImageId, CameraPose>& pred,
                            const std::map<ImageId, CameraPose>& gt,
                            std::span<const double> thresholds);

std::map<ImageId, CameraPose> PosesOf(const SceneModel& model);

// Flat "key = value" report; the header states the pose-error convention.
void WriteMetrics(const std::filesystem::path& path, const std::map<std::string, double>& metrics);

}  // namespace densesfm
