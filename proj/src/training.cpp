#include "impd/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "impd/nn/loss.hpp"

namespace impd {

namespace {

constexpr double kMinVirtualDepth = 0.05;  // meters; Gaussian rejection bound

double lr_at_step(const TrainConfig& config, int step) {
  double lr = config.lr;
  if (config.warmup_steps > 0 && step < config.warmup_steps)
    lr *= double(step + 1) / double(config.warmup_steps);
  for (const double frac : config.lr_drop_at)
    if (step >= int(frac * double(config.steps))) lr *= config.lr_drop_factor;
  return lr;
}

struct FlatFrame {
  const Frame* frame;
  Image input;  // context-stacked encoder input
  FrameStats stats;
};

std::vector<FlatFrame> flatten_dataset(const std::vector<Sequence>& dataset,
                                       const TrainConfig& config) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  std::vector<FlatFrame> out;
  for (const Sequence& seq : dataset) {
    seq.validate();
    for (size_t i = 0; i < seq.frames.size(); ++i) {
      FlatFrame ff;
      ff.frame = &seq.frames[i];
      ff.input = stack_context(seq.frames, i, config.model.context_frames);
      ff.stats = compute_frame_stats(seq.frames[i], config.edge_percentile);
      out.push_back(std::move(ff));
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  const auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(q) || !in01(p1) || !in01(p2))
    throw ConfigError("train config: q, p1, p2 must lie in [0,1]");
  if (lambda_reg < 0.0) throw ConfigError("train config: lambda_reg must be >= 0");
  if (!(gaussian_variance > 0.0))
    throw ConfigError("train config: gaussian_variance must be positive");
  if (noise_amplitude < 0.0 || noise_amplitude > 0.5)
    throw ConfigError("train config: noise_amplitude must lie in [0, 0.5]");
  if (steps < 1 || batch_size < 1 || samples_per_image < 1)
    throw ConfigError("train config: steps, batch size and samples must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"q", c.q},
       {"gaussian_variance", c.gaussian_variance},
       {"p1", c.p1},
       {"p2", c.p2},
       {"noise_amplitude", c.noise_amplitude},
       {"temporal_input", c.temporal_input},
       {"lr", c.lr},
       {"warmup_steps", c.warmup_steps},
       {"lr_drop_at", c.lr_drop_at},
       {"lr_drop_factor", c.lr_drop_factor},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"samples_per_image", c.samples_per_image},
       {"lambda_reg", c.lambda_reg},
       {"edge_percentile", c.edge_percentile},
       {"seed", c.seed},
       {"model", c.model},
       {"checkpoint_path", c.checkpoint_path}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig defaults;
  c.q = j.value("q", defaults.q);
  c.gaussian_variance = j.value("gaussian_variance", defaults.gaussian_variance);
  c.p1 = j.value("p1", defaults.p1);
  c.p2 = j.value("p2", defaults.p2);
  c.noise_amplitude = j.value("noise_amplitude", defaults.noise_amplitude);
  c.temporal_input = j.value("temporal_input", defaults.temporal_input);
  c.lr = j.value("lr", defaults.lr);
  c.warmup_steps = j.value("warmup_steps", defaults.warmup_steps);
  c.lr_drop_at = j.value("lr_drop_at", defaults.lr_drop_at);
  c.lr_drop_factor = j.value("lr_drop_factor", defaults.lr_drop_factor);
  c.steps = j.value("steps", defaults.steps);
  c.batch_size = j.value("batch_size", defaults.batch_size);
  c.samples_per_image = j.value("samples_per_image", defaults.samples_per_image);
  c.lambda_reg = j.value("lambda_reg", defaults.lambda_reg);
  c.edge_percentile = j.value("edge_percentile", defaults.edge_percentile);
  c.seed = j.value("seed", defaults.seed);
  if (j.contains("model")) j.at("model").get_to(c.model);
  c.checkpoint_path = j.value("checkpoint_path", defaults.checkpoint_path);
}

FrameStats compute_frame_stats(const Frame& frame, double edge_percentile) {
  FrameStats stats;
  stats.min_depth = std::numeric_limits<double>::infinity();
  stats.max_depth = 0.0;
  const DepthMap& d = frame.depth_gt;
  stats.valid_pixels.reserve(d.pixel_count());
  for (size_t i = 0; i < d.pixel_count(); ++i) {
    if (!d.valid[i]) continue;
    stats.valid_pixels.push_back(uint32_t(i));
    stats.min_depth = std::min(stats.min_depth, double(d.values[i]));
    stats.max_depth = std::max(stats.max_depth, double(d.values[i]));
  }
  if (stats.valid_pixels.empty())
    throw SamplingError("frame has no valid depth pixels");
  stats.edge_mask = sobel_edge_mask(d, edge_percentile);
  return stats;
}

QuerySample sample_query(const Frame& frame, const FrameStats& stats,
                         const TrainConfig& config, Rng& rng) {
  if (stats.valid_pixels.empty())
    throw SamplingError("sample_query: no valid depth pixels");
  QuerySample s;
  const uint32_t flat =
      stats.valid_pixels[rng.uniform_index(stats.valid_pixels.size())];
  const int x = int(flat % uint32_t(frame.depth_gt.width));
  const int y = int(flat / uint32_t(frame.depth_gt.width));
  s.p = PixelLocation{double(x), double(y)};
  const double gt = double(frame.depth_gt.values[flat]);

  s.near_surface = rng.uniform() < config.q;
  if (s.near_surface) {
    const double sigma = std::sqrt(config.gaussian_variance);
    do {
      s.d_virtual = rng.normal(gt, sigma);
    } while (s.d_virtual <= kMinVirtualDepth);
  } else {
    s.d_virtual = rng.uniform(stats.min_depth, stats.max_depth);
  }

  s.label = s.d_virtual >= gt ? 1 : 0;
  s.is_edge = stats.edge_mask[flat] != 0;
  s.pseudo_prev = config.temporal_input
                      ? corrupt_previous(s.label, rng, config.p1, config.p2,
                                         config.noise_amplitude)
                      : -1.0;
  return s;
}

double corrupt_previous(int y, Rng& rng, double p1, double p2,
                        double noise_amplitude) {
  if (rng.uniform() < p2) return -1.0;
  double c = std::abs(double(y) - rng.uniform(0.0, noise_amplitude));
  if (rng.uniform() < p1) c = 1.0 - c;
  return c;
}

Image stack_context(const std::vector<Frame>& frames, size_t index,
                    int context_frames) {
  const Frame& current = frames.at(index);
  Image out(current.rgb.width, current.rgb.height, 3 * (1 + context_frames));
  for (int k = 0; k <= context_frames; ++k) {
    const size_t src_idx = index >= size_t(k) ? index - size_t(k) : 0;
    const Image& src = frames[src_idx].rgb;
    for (size_t pix = 0; pix < out.pixel_count(); ++pix)
      for (int c = 0; c < 3; ++c)
        out.data[pix * size_t(out.channels) + size_t(3 * k + c)] =
            src.data[pix * 3 + size_t(c)];
  }
  return out;
}

LossParts implicit_loss(ImplicitModel& model, const Image& input,
                        std::span<const QuerySample> samples, double lambda_reg,
                        bool with_grad) {
  if (samples.empty()) throw SamplingError("implicit_loss: no samples");
  const int k = model.config.feature_channels;

  EncoderTrace trace;
  const FeatureMap fm =
      encoder_forward(model.encoder, input, with_grad ? &trace : nullptr);

  const Eigen::Index batch = Eigen::Index(samples.size());
  Eigen::MatrixXd x(k + 2, batch);
  std::vector<BilinearTaps> taps(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const QuerySample& s = samples[i];
    taps[i] = feature_taps(fm.width, fm.height, fm.stride, s.p.u, s.p.v);
    for (int c = 0; c < k; ++c) {
      double v = 0.0;
      for (int t = 0; t < 4; ++t)
        v += taps[i].weight[size_t(t)] * fm.data(c, taps[i].cell[size_t(t)]);
      x(c, Eigen::Index(i)) = v;
    }
    x(k, Eigen::Index(i)) = s.d_virtual;
    x(k + 1, Eigen::Index(i)) = s.pseudo_prev;
  }

  MlpTrace mlp_trace;
  const Eigen::VectorXd prob =
      mlp_forward_batch(model.mlp, x, with_grad ? &mlp_trace : nullptr);

  LossParts parts;
  parts.samples = samples.size();
  std::vector<double> edge_probs;
  for (size_t i = 0; i < samples.size(); ++i) {
    parts.bce += bce_loss(prob(Eigen::Index(i)), samples[i].label);
    if (samples[i].is_edge) edge_probs.push_back(prob(Eigen::Index(i)));
  }
  parts.bce /= double(samples.size());
  parts.edge_samples = edge_probs.size();
  parts.reg = edge_regularizer(edge_probs);
  parts.total = parts.bce + lambda_reg * parts.reg;

  if (!with_grad) return parts;

  Eigen::VectorXd d_logit(batch);
  for (size_t i = 0; i < samples.size(); ++i) {
    const double c = prob(Eigen::Index(i));
    double g = bce_dlogit(c, samples[i].label) / double(samples.size());
    if (samples[i].is_edge && lambda_reg > 0.0) {
      // chain through the sigmoid: dc/dlogit = c * (1 - c)
      g += lambda_reg * edge_regularizer_dc(c, edge_probs.size()) * c * (1.0 - c);
    }
    d_logit(Eigen::Index(i)) = g;
  }

  const Eigen::MatrixXd d_x = mlp_backward_batch(model.mlp, mlp_trace, d_logit);
  Eigen::MatrixXd d_features = Eigen::MatrixXd::Zero(k, fm.data.cols());
  for (size_t i = 0; i < samples.size(); ++i)
    for (int t = 0; t < 4; ++t)
      d_features.col(taps[i].cell[size_t(t)]) +=
          taps[i].weight[size_t(t)] * d_x.col(Eigen::Index(i)).head(k);
  encoder_backward(model.encoder, trace, d_features);
  return parts;
}

LossParts regression_loss(RegressionModel& model, const Image& input,
                          std::span<const RegressionQuery> queries,
                          bool with_grad) {
  if (queries.empty()) throw SamplingError("regression_loss: no queries");

  EncoderTrace trace;
  const FeatureMap fm =
      encoder_forward(model.encoder, input, with_grad ? &trace : nullptr);
  const Eigen::MatrixXd pre =
      conv_forward(model.head, fm.data, fm.width, fm.height);

  LossParts parts;
  parts.samples = queries.size();
  std::vector<BilinearTaps> taps(queries.size());
  std::vector<double> pre_sampled(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    const RegressionQuery& qu = queries[i];
    if (!(qu.gt_depth > 0.0))
      throw SamplingError("regression_loss: non-positive ground-truth depth");
    taps[i] = feature_taps(fm.width, fm.height, fm.stride, qu.p.u, qu.p.v);
    double v = 0.0;
    for (int t = 0; t < 4; ++t)
      v += taps[i].weight[size_t(t)] * pre(0, taps[i].cell[size_t(t)]);
    pre_sampled[i] = v;
    const double log_pred =
        std::log(regression_depth_from_preactivation(v));
    parts.bce += std::abs(log_pred - std::log(qu.gt_depth));
  }
  parts.bce /= double(queries.size());
  parts.total = parts.bce;

  if (!with_grad) return parts;

  Eigen::MatrixXd d_pre = Eigen::MatrixXd::Zero(1, pre.cols());
  for (size_t i = 0; i < queries.size(); ++i) {
    const double v = pre_sampled[i];
    const double log_pred = std::log(regression_depth_from_preactivation(v));
    const double diff = log_pred - std::log(queries[i].gt_depth);
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    const double t = std::tanh(v);
    // d(log depth)/d(pre) = log_half * (1 - tanh^2)
    const double d_v = sign *
                       (std::log(RegressionModel::kMaxDepth /
                                 RegressionModel::kMinDepth) *
                        0.5) *
                       (1.0 - t * t) / double(queries.size());
    for (int tp = 0; tp < 4; ++tp)
      d_pre(0, taps[i].cell[size_t(tp)]) += taps[i].weight[size_t(tp)] * d_v;
  }

  const Eigen::MatrixXd d_features =
      conv_backward(model.head, fm.data, fm.width, fm.height, d_pre);
  encoder_backward(model.encoder, trace, d_features);
  return parts;
}

namespace {

template <typename Model, typename MakeBatchLoss>
std::vector<LossRecord> run_training(Model& model,
                                     const std::vector<FlatFrame>& frames,
                                     const TrainConfig& config,
                                     MakeBatchLoss&& step_loss) {
  auto params = model.parameters();
  std::vector<LossRecord> history;
  history.reserve(size_t(config.steps));
  Rng rng(config.seed ^ 0x7261696eULL);

  for (int step = 0; step < config.steps; ++step) {
    LossParts accum;
    for (int b = 0; b < config.batch_size; ++b) {
      const FlatFrame& ff = frames[rng.uniform_index(frames.size())];
      const LossParts part = step_loss(ff, rng);
      accum.bce += part.bce;
      accum.reg += part.reg;
      accum.total += part.total;
    }
    const double inv = 1.0 / double(config.batch_size);
    accum.bce *= inv;
    accum.reg *= inv;
    accum.total *= inv;
    if (!std::isfinite(accum.total))
      throw OptimizationError("training diverged: non-finite loss at step " +
                              std::to_string(step));
    if (config.batch_size > 1) {
      for (Parameter* p : params)
        for (double& g : p->grad) g *= inv;
    }
    AdamConfig adam;
    adam.lr = lr_at_step(config, step);
    adam_step(params, adam);
    history.push_back({step, accum.bce, accum.reg, accum.total});
  }
  return history;
}

}  // namespace

ImplicitTrainResult train_implicit(const std::vector<Sequence>& dataset,
                                   const TrainConfig& config,
                                   const RegressionModel* warm_start) {
  config.validate();
  const std::vector<FlatFrame> frames = flatten_dataset(dataset, config);

  ImplicitTrainResult result{make_implicit_model(config.model, config.seed), {}};
  if (warm_start) {
    if (!(warm_start->config == config.model))
      throw ConfigError("warm start: encoder configuration mismatch");
    for (size_t i = 0; i < result.model.encoder.convs.size(); ++i) {
      result.model.encoder.convs[i].weight.value =
          warm_start->encoder.convs[i].weight.value;
      result.model.encoder.convs[i].bias.value =
          warm_start->encoder.convs[i].bias.value;
    }
  }

  result.history = run_training(
      result.model, frames, config, [&](const FlatFrame& ff, Rng& rng) {
        std::vector<QuerySample> samples(size_t(config.samples_per_image));
        for (QuerySample& s : samples)
          s = sample_query(*ff.frame, ff.stats, config, rng);
        return implicit_loss(result.model, ff.input, samples, config.lambda_reg,
                             /*with_grad=*/true);
      });

  if (!config.checkpoint_path.empty()) {
    TrainConfig recorded = config;
    recorded.checkpoint_path.clear();  // not part of the model's identity
    nlohmann::json meta;
    meta["train_config"] = recorded;
    save_checkpoint(config.checkpoint_path, result.model, meta);
  }
  return result;
}

RegressionTrainResult train_regression(const std::vector<Sequence>& dataset,
                                       const TrainConfig& config) {
  config.validate();
  const std::vector<FlatFrame> frames = flatten_dataset(dataset, config);

  RegressionTrainResult result{make_regression_model(config.model, config.seed),
                               {}};
  result.history = run_training(
      result.model, frames, config, [&](const FlatFrame& ff, Rng& rng) {
        std::vector<RegressionQuery> queries(size_t(config.samples_per_image));
        for (RegressionQuery& qu : queries) {
          const uint32_t flat =
              ff.stats.valid_pixels[rng.uniform_index(ff.stats.valid_pixels.size())];
          const int x = int(flat % uint32_t(ff.frame->depth_gt.width));
          const int y = int(flat / uint32_t(ff.frame->depth_gt.width));
          qu.p = PixelLocation{double(x), double(y)};
          qu.gt_depth = double(ff.frame->depth_gt.values[flat]);
        }
        return regression_loss(result.model, ff.input, queries,
                               /*with_grad=*/true);
      });

  if (!config.checkpoint_path.empty()) {
    TrainConfig recorded = config;
    recorded.checkpoint_path.clear();
    nlohmann::json meta;
    meta["train_config"] = recorded;
    save_checkpoint(config.checkpoint_path, result.model, meta);
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path,
                    std::span<const LossRecord> history) {
  std::ofstream out(path);
  if (!out) throw FormatError("loss csv: cannot open " + path.string());
  out << "step,bce,reg,total\n";
  char line[160];
  for (const LossRecord& r : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", r.step, r.bce,
                  r.reg, r.total);
    out << line;
  }
}

double gradient_check_implicit(ImplicitModel& model, const Frame& probe,
                               const TrainConfig& config, int min_coords,
                               uint64_t seed) {
  const FrameStats stats = compute_frame_stats(probe, config.edge_percentile);
  std::vector<Frame> single{probe};
  const Image input = stack_context(single, 0, config.model.context_frames);
  Rng rng(seed ^ 0x70726f62ULL);
  std::vector<QuerySample> samples(64);
  for (QuerySample& s : samples) s = sample_query(probe, stats, config, rng);

  auto params = model.parameters();
  zero_grads(params);
  implicit_loss(model, input, samples, config.lambda_reg, /*with_grad=*/true);
  return gradient_check_coords(
      params,
      [&] {
        return implicit_loss(model, input, samples, config.lambda_reg,
                             /*with_grad=*/false)
            .total;
      },
      min_coords, seed);
}

double gradient_check_regression(RegressionModel& model, const Frame& probe,
                                 const TrainConfig& config, int min_coords,
                                 uint64_t seed) {
  const FrameStats stats = compute_frame_stats(probe, config.edge_percentile);
  std::vector<Frame> single{probe};
  const Image input = stack_context(single, 0, config.model.context_frames);
  Rng rng(seed ^ 0x70726f62ULL);
  std::vector<RegressionQuery> queries(64);
  for (RegressionQuery& qu : queries) {
    const uint32_t flat =
        stats.valid_pixels[rng.uniform_index(stats.valid_pixels.size())];
    qu.p = PixelLocation{double(flat % uint32_t(probe.depth_gt.width)),
                         double(flat / uint32_t(probe.depth_gt.width))};
    qu.gt_depth = double(probe.depth_gt.values[flat]);
  }

  auto params = model.parameters();
  zero_grads(params);
  regression_loss(model, input, queries, /*with_grad=*/true);
  return gradient_check_coords(
      params,
      [&] { return regression_loss(model, input, queries, false).total; },
      min_coords, seed);
}

}  // namespace impd
