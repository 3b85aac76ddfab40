#pragma once

#include <map>
#include <optional>
#include <vector>

#include "impd/nn/model.hpp"
#include "impd/scene.hpp"

namespace impd {

// Continuous compositing mask C: 1 means the real scene is shown at that
// pixel. Values are meaningful only where coverage is set.
struct CompositingMask {
  int width = 0, height = 0;
  std::vector<float> values;
  std::vector<uint8_t> coverage;

  CompositingMask() = default;
  CompositingMask(int w, int h)
      : width(w), height(h), values(size_t(w) * h, 0.0f),
        coverage(size_t(w) * h, 0) {}

  size_t index(int x, int y) const { return size_t(y) * width + x; }
};

// Decision threshold per virtual-plane depth bin; lookups snap to the
// nearest bin and fall back to 0.5.
struct ThresholdTable {
  std::map<double, double> tau_by_depth;
  double default_tau = 0.5;

  double lookup(double plane_depth) const;
};

struct BinarySearchConfig {
  enum class Spacing { kLinear, kInverseDepth };

  int steps = 12;
  double d_min = 0.5;
  double d_max = 8.0;
  Spacing spacing = Spacing::kLinear;

  void validate() const;
};

// Previous-frame context for temporally smoothed prediction.
struct PreviousPrediction {
  const CompositingMask* mask = nullptr;
  Pose pose;
};

// Samples the warped previous mask at p (virtual depth as warp depth);
// -1 when unavailable, unwarpable, out of frame or off coverage.
double sample_previous(const CompositingMask& prev_mask, const Pose& pose_t,
                       const Pose& pose_prev, const CameraIntrinsics& K,
                       const PixelLocation& p, double depth_at_p);

// Full-resolution mask: per coverage pixel the MLP consumes the
// interpolated feature, the virtual depth and the warped previous value.
CompositingMask predict_mask(const ImplicitModel& model, const Image& input,
                             const DepthMap& d_virtual,
                             const PreviousPrediction* prev, const Pose& pose,
                             const CameraIntrinsics& K);

// Same, with precomputed features (the encoder runs once per frame even
// when several planes or search steps query it).
CompositingMask predict_mask_with_features(const ImplicitModel& model,
                                           const FeatureMap& features,
                                           const DepthMap& d_virtual,
                                           const PreviousPrediction* prev,
                                           const Pose& pose,
                                           const CameraIntrinsics& K);

// I_final = C * I_real + (1 - C) * I_virtual on coverage; I_real elsewhere.
Image composite(const Image& real, const Image& virtual_rgb,
                const CompositingMask& mask);

// Dense depth from the regression head (bilinear on the pre-activation map).
DepthMap predict_depth(const RegressionModel& model, const Image& input);

// One frame's calibration inputs: the continuous mask prediction plus the
// virtual and ground-truth depth maps it is scored against.
struct CalibrationFrame {
  const CompositingMask* mask = nullptr;
  const DepthMap* d_virtual = nullptr;
  const DepthMap* d_real = nullptr;
};

// Grid-searches tau in {0.05, 0.10, ..., 0.95} maximizing mean IoU All over
// the frames; ties resolve toward 0.5 (then toward the smaller tau).
double select_tau(std::span<const CalibrationFrame> frames);

// Per-plane tau over validation sequences. An empty validation set warns
// and falls back to 0.5 everywhere.
ThresholdTable select_thresholds(const ImplicitModel& model,
                                 const std::vector<Sequence>& validation,
                                 const std::vector<double>& plane_depths);

// Per-pixel classifier for binary search: returns the occlusion probability
// of query depth d at pixel (x, y).
using DepthClassifier = std::function<double(int x, int y, double depth)>;

// Interval halving on [d_min, d_max]; a prediction above tau means the real
// surface lies in front of the midpoint, so the upper bound moves down.
DepthMap binary_search_depth_with(const DepthClassifier& classify, int width,
                                  int height, const BinarySearchConfig& config,
                                  double tau);

// Runs the encoder once, then M rounds of batched MLP queries with the
// previous-prediction input pinned to -1.
DepthMap binary_search_depth(const ImplicitModel& model, const Image& input,
                             const BinarySearchConfig& config, double tau);

// Same, thresholding each midpoint query with the nearest depth bin's tau.
DepthMap binary_search_depth(const ImplicitModel& model, const Image& input,
                             const BinarySearchConfig& config,
                             const ThresholdTable& thresholds);

// Regression-baseline soft mask: C = clamp((D_virtual - D_pred)/b + 0.5, 0, 1).
CompositingMask blended_mask(const DepthMap& d_pred_real,
                             const DepthMap& d_virtual, double band = 0.2);

// Chains predict_mask over a sequence: frame 0 sees no previous prediction,
// frame t warps C^{t-1} using the rendered virtual depth.
std::vector<CompositingMask> rollout_temporal(const ImplicitModel& model,
                                              const Sequence& seq,
                                              const PlaneSpec& plane,
                                              bool temporal = true);

}  // namespace impd
