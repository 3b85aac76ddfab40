#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "impd/nn/model.hpp"
#include "impd/scene.hpp"

namespace impd {

// One training tuple: classify whether d_virtual lies behind the real
// surface at p. pseudo_prev simulates the warped previous prediction
// (-1 marks "unavailable").
struct QuerySample {
  int frame_index = 0;
  PixelLocation p;
  double d_virtual = 0.0;
  int label = 0;          // 1 iff d_virtual >= D_real(p)
  double pseudo_prev = -1.0;
  bool is_edge = false;
  bool near_surface = false;  // diagnostic: Gaussian branch taken
};

struct TrainConfig {
  // query sampling
  double q = 0.25;                  // probability of a near-surface sample
  double gaussian_variance = 0.05;  // meters^2
  double p1 = 0.25;                 // pseudo-previous flip probability
  double p2 = 0.25;                 // pseudo-previous "-1 sentinel" probability
  double noise_amplitude = 0.3;     // label softening range
  bool temporal_input = true;       // false feeds -1 for every sample

  // optimization
  double lr = 1e-3;
  int warmup_steps = 0;  // linear ramp from 0 to lr
  std::vector<double> lr_drop_at = {0.6, 0.85};  // fractions of total steps
  double lr_drop_factor = 0.1;
  int steps = 4000;
  int batch_size = 1;          // frames per step
  int samples_per_image = 512;
  double lambda_reg = 0.5;
  double edge_percentile = 0.95;
  uint64_t seed = 0;

  ModelConfig model;
  std::string checkpoint_path;  // saved after training when non-empty

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Cached per-frame sampling state.
struct FrameStats {
  std::vector<uint32_t> valid_pixels;  // flat indices into the depth map
  std::vector<uint8_t> edge_mask;
  double min_depth = 0.0, max_depth = 0.0;
};
FrameStats compute_frame_stats(const Frame& frame, double edge_percentile = 0.95);

// Draws p uniformly over valid pixels; d_virtual from the near-surface
// Gaussian with probability q (resampled until > 0.05 m), otherwise uniform
// between the frame's min and max depth.
QuerySample sample_query(const Frame& frame, const FrameStats& stats,
                         const TrainConfig& config, Rng& rng);

// Synthesizes the pseudo previous prediction from the label: sentinel with
// probability p2, else |y - U(0, noise)| flipped with probability p1.
double corrupt_previous(int y, Rng& rng, double p1, double p2,
                        double noise_amplitude = 0.3);

// Current frame with context_frames predecessors stacked along channels
// (clamped at the sequence start).
Image stack_context(const std::vector<Frame>& frames, size_t index,
                    int context_frames);

struct LossParts {
  double bce = 0.0;
  double reg = 0.0;
  double total = 0.0;
  size_t samples = 0;
  size_t edge_samples = 0;
};

// Mean BCE over the samples plus lambda_reg * edge regularizer over the
// edge subset. with_grad accumulates parameter gradients.
LossParts implicit_loss(ImplicitModel& model, const Image& input,
                        std::span<const QuerySample> samples, double lambda_reg,
                        bool with_grad);

struct RegressionQuery {
  PixelLocation p;
  double gt_depth = 0.0;
};

// Mean L1 in log depth at the sampled pixels.
LossParts regression_loss(RegressionModel& model, const Image& input,
                          std::span<const RegressionQuery> queries,
                          bool with_grad);

struct LossRecord {
  int step = 0;
  double bce = 0.0, reg = 0.0, total = 0.0;
};

struct ImplicitTrainResult {
  ImplicitModel model;
  std::vector<LossRecord> history;
};

struct RegressionTrainResult {
  RegressionModel model;
  std::vector<LossRecord> history;
};

// warm_start optionally copies a trained regression encoder before training.
ImplicitTrainResult train_implicit(const std::vector<Sequence>& dataset,
                                   const TrainConfig& config,
                                   const RegressionModel* warm_start = nullptr);

RegressionTrainResult train_regression(const std::vector<Sequence>& dataset,
                                       const TrainConfig& config);

void write_loss_csv(const std::filesystem::path& path,
                    std::span<const LossRecord> history);

// Finite-difference verification of the full training loss on a probe
// frame. Returns the max relative error over >= min_coords coordinates.
double gradient_check_implicit(ImplicitModel& model, const Frame& probe,
                               const TrainConfig& config, int min_coords,
                               uint64_t seed);
double gradient_check_regression(RegressionModel& model, const Frame& probe,
                                 const TrainConfig& config, int min_coords,
                                 uint64_t seed);

}  // namespace impd
