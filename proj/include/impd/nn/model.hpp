#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>

#include <json.hpp>

#include "impd/nn/encoder.hpp"
#include "impd/nn/mlp.hpp"

namespace impd {

struct ModelConfig {
  int feature_channels = 32;                  // K
  std::array<int, 4> widths = {16, 32, 32, 32};  // widths[3] must equal K
  std::array<int, 4> strides = {2, 1, 1, 1};     // product in {1, 2, 4}
  int mlp_hidden = 128;
  int context_frames = 0;  // previous frames channel-concatenated as input

  int input_channels() const { return 3 * (1 + context_frames); }
  int stride() const { return strides[0] * strides[1] * strides[2] * strides[3]; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Feature encoder + per-pixel classification head. The MLP consumes the
// interpolated K-vector plus the queried virtual depth (raw meters) and the
// previous-prediction value (-1 when unavailable).
struct ImplicitModel {
  ModelConfig config;
  Encoder encoder;
  Mlp mlp;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Same encoder with a 1-channel convolutional depth head. Depth is
// exp(log_mid + log_half * tanh(pre)), bounded to [kMinDepth, kMaxDepth].
struct RegressionModel {
  static constexpr double kMinDepth = 0.25;
  static constexpr double kMaxDepth = 10.0;

  ModelConfig config;
  Encoder encoder;
  Conv2d head;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

double regression_depth_from_preactivation(double pre);
// Derivative of depth w.r.t. the head pre-activation.
double regression_depth_derivative(double pre);

ImplicitModel make_implicit_model(const ModelConfig& config, uint64_t seed);
RegressionModel make_regression_model(const ModelConfig& config, uint64_t seed);

// Input must carry 3*(1+context_frames) channels; use stack_context (see
// training.hpp) to build it from a sequence position.
FeatureMap encode_features(const ImplicitModel& model, const Image& input);
FeatureMap encode_features(const RegressionModel& model, const Image& input);

// Single-query head evaluation; feature must have length K.
double mlp_forward(const ImplicitModel& model, std::span<const double> feature,
                   double d_virtual, double prev);

// --- checkpoints ---------------------------------------------------------

enum class ModelKind { kImplicit, kRegression };

struct Checkpoint {
  ModelKind kind = ModelKind::kImplicit;
  std::optional<ImplicitModel> implicit;
  std::optional<RegressionModel> regression;
  nlohmann::json meta;  // free-form (training settings etc.)
};

// "IMPD" magic, u32 version, u32 header length, JSON header, then parameter
// arrays in declaration order as little-endian float32.
void save_checkpoint(const std::filesystem::path& path, const ImplicitModel& m,
                     const nlohmann::json& meta = {});
void save_checkpoint(const std::filesystem::path& path, const RegressionModel& m,
                     const nlohmann::json& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- gradient checking ---------------------------------------------------

// Compares the gradients currently stored in params against central finite
// differences of loss_fn on >= min_coords coordinates sampled across all
// parameters. loss_fn must be a pure function of the parameter values.
// Returns the maximum relative error, |fd - grad| / max(|fd|, |grad|, floor).
double gradient_check_coords(std::span<Parameter* const> params,
                             const std::function<double()>& loss_fn,
                             int min_coords, uint64_t seed,
                             double epsilon = 1e-4, double floor = 1e-6);

}  // namespace impd
