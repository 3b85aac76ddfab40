#include "impd/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "impd/training.hpp"

namespace impd {

namespace {

// Continuous masks for one sequence and one plane, reusing per-frame
// features across planes.
std::vector<CompositingMask> masks_for_plane(
    const ImplicitModel& model, const Sequence& seq,
    const std::vector<FeatureMap>& features, const PlaneSpec& plane,
    bool temporal) {
  std::vector<CompositingMask> masks;
  masks.reserve(seq.frames.size());
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    const Frame& frame = seq.frames[f];
    const DepthMap d_virtual =
        render_plane_depth(plane, frame.pose, seq.intrinsics);
    PreviousPrediction prev;
    const bool has_prev = temporal && f > 0;
    if (has_prev) {
      prev.mask = &masks.back();
      prev.pose = seq.frames[f - 1].pose;
    }
    masks.push_back(predict_mask_with_features(model, features[f], d_virtual,
                                               has_prev ? &prev : nullptr,
                                               frame.pose, seq.intrinsics));
  }
  return masks;
}

std::vector<FeatureMap> encode_sequence(const ImplicitModel& model,
                                        const Sequence& seq) {
  std::vector<FeatureMap> features(seq.frames.size());
  parallel_for(int64_t(seq.frames.size()), [&](int64_t f) {
    const Image input =
        stack_context(seq.frames, size_t(f), model.config.context_frames);
    features[size_t(f)] = encode_features(model, input);
  });
  return features;
}

double percentile_depth(const DepthMap& depth, double fraction) {
  std::vector<float> values;
  values.reserve(depth.pixel_count());
  for (size_t i = 0; i < depth.pixel_count(); ++i)
    if (depth.valid[i]) values.push_back(depth.values[i]);
  if (values.empty()) throw SamplingError("percentile: no valid depth");
  std::sort(values.begin(), values.end());
  size_t rank = size_t(std::ceil(fraction * double(values.size())));
  rank = std::clamp<size_t>(rank, 1, values.size());
  return double(values[rank - 1]);
}

}  // namespace

std::vector<double> parse_plane_range(const std::string& spec) {
  double lo = 0.0, hi = 0.0, step = 0.0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 ||
      !(lo > 0.0) || !(step > 0.0) || hi < lo)
    throw ConfigError("plane range: expected min:max:step with 0 < min <= max, "
                      "got '" + spec + "'");
  std::vector<double> out;
  for (double d = lo; d <= hi + 1e-9; d += step) out.push_back(d);
  return out;
}

OcclusionEvalResult evaluate_occlusion(const Checkpoint& model,
                                       const std::vector<Sequence>& test,
                                       const std::vector<Sequence>& validation,
                                       const OcclusionEvalConfig& config) {
  if (test.empty()) throw ConfigError("evaluate_occlusion: no test sequences");
  if (config.plane_depths.empty())
    throw ConfigError("evaluate_occlusion: no plane depths");

  OcclusionEvalResult result;
  const bool implicit = model.kind == ModelKind::kImplicit;
  if (implicit)
    result.thresholds = select_thresholds(*model.implicit, validation,
                                          config.plane_depths);

  const size_t n_planes = config.plane_depths.size();
  std::vector<std::vector<std::optional<double>>> all(n_planes), surf(n_planes),
      bound(n_planes);

  for (const Sequence& seq : test) {
    std::vector<FeatureMap> features;
    if (implicit) {
      if (config.temporal_rollout) {
        features = encode_sequence(*model.implicit, seq);
      } else {
        // only keyframes are queried without a temporal chain
        features.resize(seq.frames.size());
        std::vector<size_t> keyframes;
        for (size_t f = 0; f < seq.frames.size();
             f += size_t(config.keyframe_stride))
          keyframes.push_back(f);
        parallel_for(int64_t(keyframes.size()), [&](int64_t i) {
          const size_t f = keyframes[size_t(i)];
          const Image input = stack_context(seq.frames, f,
                                            model.implicit->config.context_frames);
          features[f] = encode_features(*model.implicit, input);
        });
      }
    }

    std::vector<DepthMap> reg_depth(seq.frames.size());
    if (!implicit) {
      std::vector<size_t> keyframes;
      for (size_t f = 0; f < seq.frames.size(); f += size_t(config.keyframe_stride))
        keyframes.push_back(f);
      parallel_for(int64_t(keyframes.size()), [&](int64_t i) {
        const size_t f = keyframes[size_t(i)];
        const Image input = stack_context(seq.frames, f,
                                          model.regression->config.context_frames);
        reg_depth[f] = predict_depth(*model.regression, input);
      });
    }

    for (size_t pi = 0; pi < n_planes; ++pi) {
      const double plane_depth = config.plane_depths[pi];
      const PlaneSpec plane = PlaneSpec::frontoparallel(plane_depth);
      const double tau =
          implicit ? result.thresholds.lookup(plane_depth) : 0.5;

      // temporal rollout needs the full chain; otherwise only keyframes
      std::vector<CompositingMask> masks;
      if (implicit && config.temporal_rollout)
        masks = masks_for_plane(*model.implicit, seq, features, plane, true);

      for (size_t f = 0; f < seq.frames.size(); f += size_t(config.keyframe_stride)) {
        const Frame& frame = seq.frames[f];
        const DepthMap d_virtual =
            render_plane_depth(plane, frame.pose, seq.intrinsics);
        OcclusionMasks occ;
        if (implicit) {
          const CompositingMask mask =
              config.temporal_rollout
                  ? masks[f]
                  : predict_mask_with_features(*model.implicit, features[f],
                                               d_virtual, nullptr, frame.pose,
                                               seq.intrinsics);
          occ = make_occlusion_masks(mask, tau, d_virtual, frame.depth_gt);
        } else {
          // depth-regression baseline: compare predicted depth directly
          CompositingMask cmp(d_virtual.width, d_virtual.height);
          for (size_t i = 0; i < cmp.values.size(); ++i) {
            if (!d_virtual.valid[i] || !reg_depth[f].valid[i]) continue;
            cmp.coverage[i] = 1;
            cmp.values[i] =
                d_virtual.values[i] >= reg_depth[f].values[i] ? 1.0f : 0.0f;
          }
          occ = make_occlusion_masks(cmp, 0.5, d_virtual, frame.depth_gt);
        }
        const auto iou = occlusion_iou(occ, d_virtual, frame.depth_gt);
        all[pi].push_back(iou ? iou->all : std::nullopt);
        surf[pi].push_back(iou ? iou->surface : std::nullopt);
        bound[pi].push_back(iou ? iou->boundary : std::nullopt);
      }
    }
  }

  result.iou_all = aggregate_plane_ious(all);
  result.iou_surface = aggregate_plane_ious(surf);
  result.iou_boundary = aggregate_plane_ious(bound);
  for (size_t pi = 0; pi < n_planes; ++pi) {
    MetricReport report;
    const auto agg = [&](const std::vector<std::optional<double>>& v)
        -> std::optional<double> {
      double sum = 0.0;
      int n = 0;
      for (const auto& x : v)
        if (x) {
          sum += *x;
          n += 1;
        }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    report.iou_all = agg(all[pi]);
    report.iou_surface = agg(surf[pi]);
    report.iou_boundary = agg(bound[pi]);
    result.per_plane[config.plane_depths[pi]] = report;
  }
  return result;
}

TemporalEvalResult evaluate_temporal(const ImplicitModel& model,
                                     const std::vector<Sequence>& test,
                                     const ThresholdTable& thresholds,
                                     const TemporalEvalConfig& config) {
  if (config.subsequence_length < config.warmup + 2)
    throw ConfigError("evaluate_temporal: sub-sequences too short");

  TemporalEvalResult result;
  double score_sum = 0.0;
  for (const Sequence& seq : test) {
    const int usable =
        std::min<int>(int(seq.frames.size()), config.max_frames);
    const int n_subs = usable / config.subsequence_length;
    for (int s = 0; s < n_subs; ++s) {
      Sequence sub;
      sub.intrinsics = seq.intrinsics;
      for (int f = 0; f < config.subsequence_length; ++f)
        sub.frames.push_back(
            seq.frames[size_t(s * config.subsequence_length + f)]);

      const double d_eval =
          percentile_depth(sub.frames.front().depth_gt, config.depth_percentile);
      const PlaneSpec plane =
          PlaneSpec::fixed_in_world(sub.frames.front().pose, d_eval);
      const double tau = thresholds.lookup(d_eval);

      const std::vector<FeatureMap> features = encode_sequence(model, sub);
      const std::vector<CompositingMask> masks = masks_for_plane(
          model, sub, features, plane, config.temporal_rollout);
      const auto score =
          temporal_score(masks, sub, tau, config.warmup, config.max_points);
      if (score) {
        score_sum += *score;
        result.subsequences += 1;
      }
    }
  }
  if (result.subsequences == 0)
    throw Error("evaluate_temporal: no scorable sub-sequences");
  result.score = score_sum / double(result.subsequences);
  return result;
}

std::optional<DepthMetrics> evaluate_depth(const Checkpoint& model,
                                           const std::vector<Sequence>& test,
                                           const BinarySearchConfig& search,
                                           const ThresholdTable& thresholds,
                                           int keyframe_stride) {
  DepthMetrics sums{};
  int64_t frames = 0;
  for (const Sequence& seq : test) {
    std::vector<size_t> keyframes;
    for (size_t f = 0; f < seq.frames.size(); f += size_t(keyframe_stride))
      keyframes.push_back(f);
    std::vector<std::optional<DepthMetrics>> per_frame(keyframes.size());
    parallel_for(int64_t(keyframes.size()), [&](int64_t i) {
      const size_t f = keyframes[size_t(i)];
      const int context = model.kind == ModelKind::kImplicit
                              ? model.implicit->config.context_frames
                              : model.regression->config.context_frames;
      const Image input = stack_context(seq.frames, f, context);
      DepthMap pred;
      if (model.kind == ModelKind::kImplicit) {
        pred = binary_search_depth(*model.implicit, input, search, thresholds);
      } else {
        pred = predict_depth(*model.regression, input);
      }
      per_frame[size_t(i)] = depth_metrics(pred, seq.frames[f].depth_gt);
    });
    for (const auto& m : per_frame) {
      if (!m) continue;
      sums.abs_diff += m->abs_diff;
      sums.abs_rel += m->abs_rel;
      sums.sq_rel += m->sq_rel;
      sums.rmse += m->rmse;
      sums.log_rmse += m->log_rmse;
      sums.delta_105 += m->delta_105;
      sums.delta_110 += m->delta_110;
      sums.delta_125 += m->delta_125;
      frames += 1;
    }
  }
  if (frames == 0) return std::nullopt;
  const double inv = 1.0 / double(frames);
  sums.abs_diff *= inv;
  sums.abs_rel *= inv;
  sums.sq_rel *= inv;
  sums.rmse *= inv;
  sums.log_rmse *= inv;
  sums.delta_105 *= inv;
  sums.delta_110 *= inv;
  sums.delta_125 *= inv;
  return sums;
}

}  // namespace impd
