#pragma once

#include "impd/inference.hpp"
#include "impd/metrics.hpp"

namespace impd {

// Parses "min:max:step" into the plane-depth grid.
std::vector<double> parse_plane_range(const std::string& spec);

struct OcclusionEvalConfig {
  std::vector<double> plane_depths = {0.5, 1.0, 1.5, 2.0, 2.5,
                                      3.0, 3.5, 4.0, 4.5, 5.0};
  int keyframe_stride = 1;
  bool temporal_rollout = false;  // chain masks across frames (implicit only)
};

struct OcclusionEvalResult {
  double iou_all = 0.0;
  double iou_surface = 0.0;
  double iou_boundary = 0.0;
  ThresholdTable thresholds;
  // per plane depth, aggregated over keyframes
  std::map<double, MetricReport> per_plane;
};

// Frontoparallel plane sweep per keyframe. Implicit checkpoints threshold
// with tau from the validation set (0.5 when empty); regression checkpoints
// compare predicted depth against the plane directly.
OcclusionEvalResult evaluate_occlusion(const Checkpoint& model,
                                       const std::vector<Sequence>& test,
                                       const std::vector<Sequence>& validation,
                                       const OcclusionEvalConfig& config);

struct TemporalEvalConfig {
  int subsequence_length = 15;
  int warmup = 2;
  int max_frames = 120;
  double depth_percentile = 0.75;  // plane depth from the first frame
  bool temporal_rollout = true;
  int max_points = 1024;
};

struct TemporalEvalResult {
  double score = 0.0;  // mean over sub-sequences
  int subsequences = 0;
};

// Splits each sequence into fixed-length sub-sequences, anchors a world
// plane in front of each one's first camera, rolls masks out and scores
// visibility flips.
TemporalEvalResult evaluate_temporal(const ImplicitModel& model,
                                     const std::vector<Sequence>& test,
                                     const ThresholdTable& thresholds,
                                     const TemporalEvalConfig& config);

// Dense depth for every keyframe: binary search for implicit models,
// direct prediction for regression models. Metrics aggregate over frames.
std::optional<DepthMetrics> evaluate_depth(const Checkpoint& model,
                                           const std::vector<Sequence>& test,
                                           const BinarySearchConfig& search,
                                           const ThresholdTable& thresholds,
                                           int keyframe_stride = 1);

}  // namespace impd
