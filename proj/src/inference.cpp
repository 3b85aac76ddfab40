#include "impd/inference.hpp"

#include <cmath>
#include <iostream>

#include "impd/metrics.hpp"
#include "impd/training.hpp"

namespace impd {

namespace {

// Batched MLP evaluation over the coverage pixels of a frame.
Eigen::VectorXd evaluate_queries(const ImplicitModel& model,
                                 const FeatureMap& fm,
                                 const std::vector<int>& pixels, int width,
                                 const std::vector<double>& depths,
                                 const std::vector<double>& prevs) {
  const int k = model.config.feature_channels;
  Eigen::MatrixXd x(k + 2, Eigen::Index(pixels.size()));
  for (size_t i = 0; i < pixels.size(); ++i) {
    const int px = pixels[i] % width;
    const int py = pixels[i] / width;
    const BilinearTaps taps =
        feature_taps(fm.width, fm.height, fm.stride, double(px), double(py));
    for (int c = 0; c < k; ++c) {
      double v = 0.0;
      for (int t = 0; t < 4; ++t)
        v += taps.weight[size_t(t)] * fm.data(c, taps.cell[size_t(t)]);
      x(c, Eigen::Index(i)) = v;
    }
    x(k, Eigen::Index(i)) = depths[i];
    x(k + 1, Eigen::Index(i)) = prevs[i];
  }
  return mlp_forward_batch(model.mlp, x);
}

}  // namespace

double ThresholdTable::lookup(double plane_depth) const {
  if (tau_by_depth.empty()) return default_tau;
  double best_tau = default_tau;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& [depth, tau] : tau_by_depth) {
    const double dist = std::abs(depth - plane_depth);
    if (dist < best_dist) {
      best_dist = dist;
      best_tau = tau;
    }
  }
  return best_tau;
}

void BinarySearchConfig::validate() const {
  if (steps < 1) throw ConfigError("binary search: steps must be >= 1");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ConfigError("binary search: need 0 < d_min < d_max");
}

double sample_previous(const CompositingMask& prev_mask, const Pose& pose_t,
                       const Pose& pose_prev, const CameraIntrinsics& K,
                       const PixelLocation& p, double depth_at_p) {
  const auto warped = warp_location(p, depth_at_p, pose_t, pose_prev, K);
  if (!warped) return -1.0;
  const double value = bilinear_sample(prev_mask.values, prev_mask.width,
                                       prev_mask.height, *warped, -1.0);
  if (value < 0.0) return -1.0;
  // every interpolation neighbour must carry a defined mask value
  const int x0 = int(std::floor(warped->u));
  const int y0 = int(std::floor(warped->v));
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int x = std::min(x0 + dx, prev_mask.width - 1);
      const int y = std::min(y0 + dy, prev_mask.height - 1);
      if (!prev_mask.coverage[prev_mask.index(x, y)]) return -1.0;
    }
  }
  return value;
}

CompositingMask predict_mask(const ImplicitModel& model, const Image& input,
                             const DepthMap& d_virtual,
                             const PreviousPrediction* prev, const Pose& pose,
                             const CameraIntrinsics& K) {
  const FeatureMap fm = encode_features(model, input);
  return predict_mask_with_features(model, fm, d_virtual, prev, pose, K);
}

CompositingMask predict_mask_with_features(const ImplicitModel& model,
                                           const FeatureMap& features,
                                           const DepthMap& d_virtual,
                                           const PreviousPrediction* prev,
                                           const Pose& pose,
                                           const CameraIntrinsics& K) {
  if (features.width * features.stride != d_virtual.width ||
      features.height * features.stride != d_virtual.height)
    throw ShapeError("predict_mask: virtual depth resolution does not match "
                     "the encoded frame");

  CompositingMask mask(d_virtual.width, d_virtual.height);
  std::vector<int> pixels;
  pixels.reserve(d_virtual.pixel_count());
  for (int i = 0; i < int(d_virtual.pixel_count()); ++i)
    if (d_virtual.valid[size_t(i)]) pixels.push_back(i);

  std::vector<double> depths(pixels.size()), prevs(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    const int px = pixels[i] % d_virtual.width;
    const int py = pixels[i] / d_virtual.width;
    depths[i] = double(d_virtual.values[size_t(pixels[i])]);
    prevs[i] = prev && prev->mask
                   ? sample_previous(*prev->mask, pose, prev->pose, K,
                                     PixelLocation{double(px), double(py)},
                                     depths[i])
                   : -1.0;
  }

  const Eigen::VectorXd prob =
      evaluate_queries(model, features, pixels, d_virtual.width, depths, prevs);
  for (size_t i = 0; i < pixels.size(); ++i) {
    mask.values[size_t(pixels[i])] = float(prob(Eigen::Index(i)));
    mask.coverage[size_t(pixels[i])] = 1;
  }
  return mask;
}

Image composite(const Image& real, const Image& virtual_rgb,
                const CompositingMask& mask) {
  if (!real.same_shape(virtual_rgb) || real.width != mask.width ||
      real.height != mask.height)
    throw ShapeError("composite: image/mask dimensions differ");
  Image out = real;
  for (int y = 0; y < real.height; ++y) {
    for (int x = 0; x < real.width; ++x) {
      if (!mask.coverage[mask.index(x, y)]) continue;
      const float c = mask.values[mask.index(x, y)];
      for (int ch = 0; ch < real.channels; ++ch)
        out.at(x, y, ch) =
            c * real.at(x, y, ch) + (1.0f - c) * virtual_rgb.at(x, y, ch);
    }
  }
  return out;
}

DepthMap predict_depth(const RegressionModel& model, const Image& input) {
  const FeatureMap fm = encode_features(model, input);
  const Eigen::MatrixXd pre = conv_forward(model.head, fm.data, fm.width, fm.height);
  DepthMap out(input.width, input.height);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const BilinearTaps taps =
          feature_taps(fm.width, fm.height, fm.stride, double(x), double(y));
      double v = 0.0;
      for (int t = 0; t < 4; ++t)
        v += taps.weight[size_t(t)] * pre(0, taps.cell[size_t(t)]);
      out.values[out.index(x, y)] = float(regression_depth_from_preactivation(v));
      out.valid[out.index(x, y)] = 1;
    }
  }
  return out;
}

double select_tau(std::span<const CalibrationFrame> frames) {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);

  std::vector<double> iou_sum(grid.size(), 0.0);
  std::vector<int> defined(grid.size(), 0);
  for (const CalibrationFrame& cf : frames) {
    for (size_t g = 0; g < grid.size(); ++g) {
      const OcclusionMasks occ =
          make_occlusion_masks(*cf.mask, grid[g], *cf.d_virtual, *cf.d_real);
      const auto iou = occlusion_iou(occ, *cf.d_virtual, *cf.d_real);
      if (iou && iou->all) {
        iou_sum[g] += *iou->all;
        defined[g] += 1;
      }
    }
  }

  double best_tau = 0.5, best_score = -1.0;
  bool first = true;
  for (size_t g = 0; g < grid.size(); ++g) {
    if (defined[g] == 0) continue;
    const double score = iou_sum[g] / double(defined[g]);
    const bool better =
        first || score > best_score + 1e-12 ||
        (std::abs(score - best_score) <= 1e-12 &&
         std::abs(grid[g] - 0.5) < std::abs(best_tau - 0.5) - 1e-12);
    if (better) {
      best_score = score;
      best_tau = grid[g];
      first = false;
    }
  }
  return best_tau;
}

ThresholdTable select_thresholds(const ImplicitModel& model,
                                 const std::vector<Sequence>& validation,
                                 const std::vector<double>& plane_depths) {
  ThresholdTable table;
  if (validation.empty()) {
    std::cerr << "select_thresholds: empty validation set, using tau = 0.5\n";
    for (const double d : plane_depths) table.tau_by_depth[d] = 0.5;
    return table;
  }

  // encode every validation frame once, then sweep planes and the tau grid
  std::vector<FeatureMap> features;
  std::vector<const Frame*> frames_flat;
  std::vector<const Sequence*> seq_of;
  for (const Sequence& seq : validation) {
    for (size_t f = 0; f < seq.frames.size(); ++f) {
      const Image input =
          stack_context(seq.frames, f, model.config.context_frames);
      features.push_back(encode_features(model, input));
      frames_flat.push_back(&seq.frames[f]);
      seq_of.push_back(&seq);
    }
  }

  for (const double plane_depth : plane_depths) {
    std::vector<CompositingMask> masks;
    std::vector<DepthMap> virtuals;
    for (size_t i = 0; i < frames_flat.size(); ++i) {
      virtuals.push_back(render_plane_depth(
          PlaneSpec::frontoparallel(plane_depth), frames_flat[i]->pose,
          seq_of[i]->intrinsics));
      masks.push_back(predict_mask_with_features(
          model, features[i], virtuals.back(), nullptr, frames_flat[i]->pose,
          seq_of[i]->intrinsics));
    }
    std::vector<CalibrationFrame> frames(masks.size());
    for (size_t i = 0; i < masks.size(); ++i)
      frames[i] = {&masks[i], &virtuals[i], &frames_flat[i]->depth_gt};
    table.tau_by_depth[plane_depth] = select_tau(frames);
  }
  return table;
}

DepthMap binary_search_depth_with(const DepthClassifier& classify, int width,
                                  int height, const BinarySearchConfig& config,
                                  double tau) {
  config.validate();
  const bool inverse = config.spacing == BinarySearchConfig::Spacing::kInverseDepth;
  const double lo0 = inverse ? 1.0 / config.d_max : config.d_min;
  const double hi0 = inverse ? 1.0 / config.d_min : config.d_max;

  DepthMap out(width, height, 0.0f, true);
  std::vector<double> lo(size_t(width) * height, lo0);
  std::vector<double> hi(size_t(width) * height, hi0);
  for (int step = 0; step < config.steps; ++step) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const size_t i = size_t(y) * width + x;
        const double mid = 0.5 * (lo[i] + hi[i]);
        const double depth = inverse ? 1.0 / mid : mid;
        const double c = classify(x, y, depth);
        // c > tau: the real surface occludes this query, so it is nearer.
        const bool real_in_front = c > tau;
        if (inverse) {
          // inverse-depth axis is reversed: larger value = nearer
          (real_in_front ? lo[i] : hi[i]) = mid;
        } else {
          (real_in_front ? hi[i] : lo[i]) = mid;
        }
      }
    }
  }
  for (size_t i = 0; i < out.values.size(); ++i) {
    const double mid = 0.5 * (lo[i] + hi[i]);
    out.values[i] = float(inverse ? 1.0 / mid : mid);
  }
  return out;
}

namespace {

DepthMap binary_search_depth_impl(const ImplicitModel& model,
                                  const Image& input,
                                  const BinarySearchConfig& config,
                                  const std::function<double(double)>& tau_at) {
  config.validate();
  // encoder runs exactly once; every search step only touches the MLP
  const FeatureMap fm = encode_features(model, input);
  const int width = input.width, height = input.height;
  const bool inverse = config.spacing == BinarySearchConfig::Spacing::kInverseDepth;
  const double lo0 = inverse ? 1.0 / config.d_max : config.d_min;
  const double hi0 = inverse ? 1.0 / config.d_min : config.d_max;

  const size_t n = size_t(width) * height;
  std::vector<double> lo(n, lo0), hi(n, hi0);
  std::vector<int> pixels(n);
  for (size_t i = 0; i < n; ++i) pixels[i] = int(i);
  const std::vector<double> prevs(n, -1.0);

  std::vector<double> depths(n);
  for (int step = 0; step < config.steps; ++step) {
    for (size_t i = 0; i < n; ++i) {
      const double mid = 0.5 * (lo[i] + hi[i]);
      depths[i] = inverse ? 1.0 / mid : mid;
    }
    const Eigen::VectorXd prob =
        evaluate_queries(model, fm, pixels, width, depths, prevs);
    for (size_t i = 0; i < n; ++i) {
      const double mid = 0.5 * (lo[i] + hi[i]);
      const bool real_in_front = prob(Eigen::Index(i)) > tau_at(depths[i]);
      if (inverse)
        (real_in_front ? lo[i] : hi[i]) = mid;
      else
        (real_in_front ? hi[i] : lo[i]) = mid;
    }
  }

  DepthMap out(width, height, 0.0f, true);
  for (size_t i = 0; i < n; ++i) {
    const double mid = 0.5 * (lo[i] + hi[i]);
    out.values[i] = float(inverse ? 1.0 / mid : mid);
  }
  return out;
}

}  // namespace

DepthMap binary_search_depth(const ImplicitModel& model, const Image& input,
                             const BinarySearchConfig& config, double tau) {
  return binary_search_depth_impl(model, input, config,
                                  [tau](double) { return tau; });
}

DepthMap binary_search_depth(const ImplicitModel& model, const Image& input,
                             const BinarySearchConfig& config,
                             const ThresholdTable& thresholds) {
  return binary_search_depth_impl(
      model, input, config,
      [&thresholds](double depth) { return thresholds.lookup(depth); });
}

CompositingMask blended_mask(const DepthMap& d_pred_real,
                             const DepthMap& d_virtual, double band) {
  if (d_pred_real.width != d_virtual.width ||
      d_pred_real.height != d_virtual.height)
    throw ShapeError("blended_mask: depth map dimensions differ");
  if (!(band > 0.0)) throw ConfigError("blended_mask: band must be positive");

  CompositingMask mask(d_virtual.width, d_virtual.height);
  for (size_t i = 0; i < mask.values.size(); ++i) {
    if (!d_virtual.valid[i] || !d_pred_real.valid[i]) continue;
    const double c = std::clamp(
        (double(d_virtual.values[i]) - double(d_pred_real.values[i])) / band +
            0.5,
        0.0, 1.0);
    mask.values[i] = float(c);
    mask.coverage[i] = 1;
  }
  return mask;
}

std::vector<CompositingMask> rollout_temporal(const ImplicitModel& model,
                                              const Sequence& seq,
                                              const PlaneSpec& plane,
                                              bool temporal) {
  std::vector<CompositingMask> masks;
  masks.reserve(seq.frames.size());
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    const Frame& frame = seq.frames[f];
    const Image input = stack_context(seq.frames, f, model.config.context_frames);
    const DepthMap d_virtual =
        render_plane_depth(plane, frame.pose, seq.intrinsics);
    PreviousPrediction prev;
    const bool has_prev = temporal && f > 0;
    if (has_prev) {
      prev.mask = &masks.back();
      prev.pose = seq.frames[f - 1].pose;
    }
    masks.push_back(predict_mask(model, input, d_virtual,
                                 has_prev ? &prev : nullptr, frame.pose,
                                 seq.intrinsics));
  }
  return masks;
}

}  // namespace impd
