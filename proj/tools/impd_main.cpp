#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "impd/dataset_io.hpp"
#include "impd/evaluation.hpp"
#include "impd/image_io.hpp"
#include "impd/reference.hpp"
#include "impd/training.hpp"

namespace fs = std::filesystem;
using namespace impd;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void write_run_json(const fs::path& out_dir, const std::string& command,
                    const nlohmann::json& options) {
  fs::create_directories(out_dir);
  nlohmann::json run;
  run["command"] = command;
  run["options"] = options;
  std::ofstream out(out_dir / "run.json");
  out << run.dump(2) << "\n";
  if (!out) throw FormatError("cannot write run.json under " + out_dir.string());
}

struct TrainCli {
  std::string data, out, config_file, warm_start;
  TrainConfig flags;  // flag values; only explicitly-set ones are applied
  bool no_temporal = false;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--data", data, "dataset directory")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--config", config_file, "training config JSON");
    cmd->add_option("--steps", flags.steps, "optimization steps");
    cmd->add_option("--lr", flags.lr, "initial learning rate");
    cmd->add_option("--seed", flags.seed, "RNG seed");
    cmd->add_option("--samples", flags.samples_per_image, "queries per image");
    cmd->add_option("--batch", flags.batch_size, "frames per step");
    cmd->add_option("--lambda-reg", flags.lambda_reg, "edge regularizer weight");
    cmd->add_option("--k", flags.model.feature_channels,
                    "feature channels (sets the last encoder width too)");
    cmd->add_flag("--no-temporal", no_temporal,
                  "train without the previous-prediction input");
    cmd->add_option("--warm-start", warm_start,
                    "regression checkpoint that seeds the encoder");
  }

  TrainConfig resolve() const {
    TrainConfig resolved;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw FormatError("cannot open config " + config_file);
      nlohmann::json j;
      in >> j;
      resolved = j.get<TrainConfig>();
    }
    const TrainConfig defaults;
    if (flags.steps != defaults.steps) resolved.steps = flags.steps;
    if (flags.lr != defaults.lr) resolved.lr = flags.lr;
    if (flags.seed != defaults.seed) resolved.seed = flags.seed;
    if (flags.samples_per_image != defaults.samples_per_image)
      resolved.samples_per_image = flags.samples_per_image;
    if (flags.batch_size != defaults.batch_size)
      resolved.batch_size = flags.batch_size;
    if (flags.lambda_reg != defaults.lambda_reg)
      resolved.lambda_reg = flags.lambda_reg;
    if (flags.model.feature_channels != defaults.model.feature_channels) {
      resolved.model.feature_channels = flags.model.feature_channels;
      resolved.model.widths[3] = flags.model.feature_channels;
    }
    if (no_temporal) resolved.temporal_input = false;
    return resolved;
  }
};

int cmd_synth(uint64_t seed, int scenes, int frames, int width, int height,
              const SceneGenConfig& gen, const std::string& out) {
  const CameraIntrinsics K = default_intrinsics(width, height);
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  for (int i = 0; i < scenes; ++i) {
    const uint64_t scene_seed = seed + uint64_t(i);
    const SceneDescription scene = generate_scene(scene_seed, gen);
    const Sequence seq = generate_sequence(scene, scene_seed, frames, K);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    save_sequence(seq, out_dir / name);
    std::cout << "wrote " << (out_dir / name).string() << " (" << frames
              << " frames)\n";
  }
  write_run_json(out_dir, "synth",
                 {{"seed", seed},
                  {"scenes", scenes},
                  {"frames", frames},
                  {"width", width},
                  {"height", height},
                  {"min_primitives", gen.min_primitives},
                  {"max_primitives", gen.max_primitives}});
  return 0;
}

int cmd_train(const TrainCli& cli, bool baseline) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out_dir(cli.out);
  fs::create_directories(out_dir);

  TrainConfig config = cli.resolve();
  config.checkpoint_path = (out_dir / "model.ckpt").string();
  const std::vector<Sequence> dataset = load_dataset(cli.data);

  std::vector<LossRecord> history;
  if (baseline) {
    history = train_regression(dataset, config).history;
  } else if (!cli.warm_start.empty()) {
    const Checkpoint warm = load_checkpoint(cli.warm_start);
    if (warm.kind != ModelKind::kRegression)
      throw ConfigError("--warm-start expects a regression checkpoint");
    history = train_implicit(dataset, config, &*warm.regression).history;
  } else {
    history = train_implicit(dataset, config).history;
  }

  write_loss_csv(out_dir / "loss.csv", history);
  nlohmann::json options;
  options["train_config"] = config;
  options["data"] = cli.data;
  options["baseline"] = baseline;
  if (!cli.warm_start.empty()) options["warm_start"] = cli.warm_start;
  write_run_json(out_dir, baseline ? "train-baseline" : "train", options);
  std::cout << (baseline ? "regression" : "implicit") << " model trained in "
            << seconds_since(t0) << " s; final loss " << history.back().total
            << "\ncheckpoint: " << config.checkpoint_path << "\n";
  return 0;
}

int cmd_eval_occlusion(const std::string& model_path, const std::string& data,
                       const std::string& val, const std::string& planes,
                       int keyframe_stride, bool temporal,
                       const std::string& out) {
  const Checkpoint model = load_checkpoint(model_path);
  const std::vector<Sequence> test = load_dataset(data);
  std::vector<Sequence> validation;
  if (!val.empty()) validation = load_dataset(val);

  OcclusionEvalConfig config;
  config.plane_depths = parse_plane_range(planes);
  config.keyframe_stride = keyframe_stride;
  config.temporal_rollout = temporal;
  const OcclusionEvalResult result =
      evaluate_occlusion(model, test, validation, config);

  nlohmann::json report;
  report["iou_all"] = result.iou_all;
  report["iou_surface"] = result.iou_surface;
  report["iou_boundary"] = result.iou_boundary;
  nlohmann::json per_plane = nlohmann::json::object();
  for (const auto& [depth, plane_report] : result.per_plane)
    per_plane[std::to_string(depth)] = report_to_json(plane_report);
  report["per_plane"] = per_plane;
  nlohmann::json taus = nlohmann::json::object();
  for (const auto& [depth, tau] : result.thresholds.tau_by_depth)
    taus[std::to_string(depth)] = tau;
  report["thresholds"] = taus;

  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "occlusion_report.json") << report.dump(2) << "\n";

  MetricReport table_report;
  table_report.iou_all = result.iou_all;
  table_report.iou_surface = result.iou_surface;
  table_report.iou_boundary = result.iou_boundary;
  const std::string table = report_table(
      model.kind == ModelKind::kImplicit ? "implicit" : "regression",
      table_report);
  std::ofstream(out_dir / "occlusion_report.txt") << table;
  std::cout << table;

  write_run_json(out_dir, "eval-occlusion",
                 {{"model", model_path},
                  {"data", data},
                  {"val", val},
                  {"planes", planes},
                  {"keyframe_stride", keyframe_stride},
                  {"temporal", temporal}});
  return 0;
}

int cmd_eval_depth(const std::string& model_path, const std::string& data,
                   const BinarySearchConfig& search, int keyframe_stride,
                   const std::string& out) {
  const Checkpoint model = load_checkpoint(model_path);
  const std::vector<Sequence> test = load_dataset(data);
  const auto metrics =
      evaluate_depth(model, test, search, ThresholdTable{}, keyframe_stride);
  if (!metrics) throw Error("eval-depth: no valid frames");

  MetricReport report;
  report.depth = metrics;
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "depth_report.json")
      << report_to_json(report).dump(2) << "\n";
  const std::string table = report_table(
      model.kind == ModelKind::kImplicit ? "binary-search" : "regression",
      report);
  std::ofstream(out_dir / "depth_report.txt") << table;
  std::cout << table;

  write_run_json(out_dir, "eval-depth",
                 {{"model", model_path},
                  {"data", data},
                  {"search_steps", search.steps},
                  {"d_min", search.d_min},
                  {"d_max", search.d_max},
                  {"keyframe_stride", keyframe_stride}});
  return 0;
}

int cmd_eval_temporal(const std::string& model_path, const std::string& data,
                      const TemporalEvalConfig& config, const std::string& out) {
  const Checkpoint model = load_checkpoint(model_path);
  if (model.kind != ModelKind::kImplicit)
    throw ConfigError("eval-temporal requires an implicit checkpoint");
  const std::vector<Sequence> test = load_dataset(data);
  const TemporalEvalResult result =
      evaluate_temporal(*model.implicit, test, ThresholdTable{}, config);

  nlohmann::json report;
  report["temporal_score"] = result.score;
  report["subsequences"] = result.subsequences;
  report["temporal_rollout"] = config.temporal_rollout;
  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "temporal_report.json") << report.dump(2) << "\n";
  std::cout << "temporal score " << result.score << " over "
            << result.subsequences << " sub-sequences\n";

  write_run_json(out_dir, "eval-temporal",
                 {{"model", model_path},
                  {"data", data},
                  {"subsequence_length", config.subsequence_length},
                  {"warmup", config.warmup},
                  {"temporal_rollout", config.temporal_rollout}});
  return 0;
}

int cmd_composite(const std::string& model_path, const std::string& data,
                  double plane_depth, bool world_plane, const std::string& out) {
  const Checkpoint model = load_checkpoint(model_path);
  const Sequence seq = load_sequence(data);
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const PlaneSpec plane =
      world_plane
          ? PlaneSpec::fixed_in_world(seq.frames.front().pose, plane_depth)
          : PlaneSpec::frontoparallel(plane_depth);
  const float virtual_color[3] = {0.95f, 0.55f, 0.15f};

  std::vector<CompositingMask> masks;
  if (model.kind == ModelKind::kImplicit) {
    // models trained without the temporal input expect the -1 sentinel
    bool temporal = true;
    if (model.meta.contains("train_config"))
      temporal = model.meta["train_config"].value("temporal_input", true);
    masks = rollout_temporal(*model.implicit, seq, plane, temporal);
  } else {
    for (size_t f = 0; f < seq.frames.size(); ++f) {
      const Image input = stack_context(
          seq.frames, f, model.regression->config.context_frames);
      const DepthMap pred = predict_depth(*model.regression, input);
      const DepthMap d_virtual =
          render_plane_depth(plane, seq.frames[f].pose, seq.intrinsics);
      masks.push_back(blended_mask(pred, d_virtual));
    }
  }

  for (size_t f = 0; f < seq.frames.size(); ++f) {
    const Frame& frame = seq.frames[f];
    Image virtual_rgb(frame.rgb.width, frame.rgb.height, 3);
    for (size_t i = 0; i < virtual_rgb.pixel_count(); ++i)
      for (int c = 0; c < 3; ++c)
        virtual_rgb.data[i * 3 + size_t(c)] = virtual_color[c];

    // 0 = virtual shown, 255 = real shown; off-coverage renders as real
    std::vector<float> mask_png(masks[f].values.size(), 1.0f);
    for (size_t i = 0; i < mask_png.size(); ++i)
      if (masks[f].coverage[i]) mask_png[i] = masks[f].values[i];
    char name[48];
    std::snprintf(name, sizeof(name), "mask_%05d.png", int(f));
    write_gray_png(out_dir / name, mask_png, masks[f].width, masks[f].height);

    const Image blended = composite(frame.rgb, virtual_rgb, masks[f]);
    std::snprintf(name, sizeof(name), "composite_%05d.png", int(f));
    write_png(out_dir / name, blended);
  }

  write_run_json(out_dir, "composite",
                 {{"model", model_path},
                  {"data", data},
                  {"plane_depth", plane_depth},
                  {"world_plane", world_plane}});
  std::cout << "wrote " << seq.frames.size() << " masks + composites to "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_extract_depth(const std::string& model_path, const std::string& data,
                      const BinarySearchConfig& search, const std::string& out) {
  const Checkpoint model = load_checkpoint(model_path);
  if (model.kind != ModelKind::kImplicit)
    throw ConfigError("extract-depth requires an implicit checkpoint");
  const Sequence seq = load_sequence(data);
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  std::vector<DepthMap> preds(seq.frames.size());
  parallel_for(int64_t(seq.frames.size()), [&](int64_t f) {
    const Image input = stack_context(seq.frames, size_t(f),
                                      model.implicit->config.context_frames);
    preds[size_t(f)] = binary_search_depth(*model.implicit, input, search, 0.5);
  });
  for (size_t f = 0; f < preds.size(); ++f) {
    char name[48];
    std::snprintf(name, sizeof(name), "depth_pred_%05d.bin", int(f));
    write_depth_bin(out_dir / name, preds[f]);
  }

  write_run_json(out_dir, "extract-depth",
                 {{"model", model_path},
                  {"data", data},
                  {"search_steps", search.steps},
                  {"d_min", search.d_min},
                  {"d_max", search.d_max}});
  std::cout << "wrote " << preds.size() << " depth maps to " << out_dir.string()
            << "\n";
  return 0;
}

int cmd_selftest() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;

  ModelConfig small;
  small.feature_channels = 8;
  small.widths = {8, 8, 8, 8};
  small.mlp_hidden = 16;
  TrainConfig config;
  config.model = small;

  const SceneDescription scene = generate_scene(12, {});
  const CameraIntrinsics K = default_intrinsics(24, 16);
  Pose pose;
  pose.translation = Eigen::Vector3d(0.0, 0.0, -2.0);
  const Frame probe = render_frame(scene, pose, K);

  ImplicitModel implicit = make_implicit_model(small, 1);
  const double e_implicit =
      gradient_check_implicit(implicit, probe, config, 60, 2);
  std::cout << "gradient check (implicit):   max rel error " << e_implicit
            << (e_implicit < 1e-3 ? "  [ok]" : "  [FAIL]") << "\n";
  ok = ok && e_implicit < 1e-3;

  RegressionModel regression = make_regression_model(small, 1);
  const double e_regression =
      gradient_check_regression(regression, probe, config, 60, 2);
  std::cout << "gradient check (regression): max rel error " << e_regression
            << (e_regression < 1e-3 ? "  [ok]" : "  [FAIL]") << "\n";
  ok = ok && e_regression < 1e-3;

  Rng rng(42);
  int mismatches = 0;
  for (int it = 0; it < 100; ++it) {
    const int w = 2 + int(rng.uniform_index(15));
    const int h = 2 + int(rng.uniform_index(15));
    OcclusionMasks m;
    m.width = w;
    m.height = h;
    const size_t n = size_t(w) * h;
    m.y_pred.resize(n);
    m.y_gt.resize(n);
    m.region.resize(n);
    DepthMap d_virtual(w, h), d_real(w, h), d_pred(w, h);
    for (size_t i = 0; i < n; ++i) {
      m.y_pred[i] = rng.uniform() < 0.5;
      m.y_gt[i] = rng.uniform() < 0.5;
      m.region[i] = rng.uniform() < 0.8;
      d_virtual.values[i] = float(rng.uniform(0.5, 4.0));
      d_real.values[i] = float(rng.uniform(0.5, 4.0));
      d_pred.values[i] = float(rng.uniform(0.5, 4.0));
      d_virtual.valid[i] = 1;
      d_real.valid[i] = rng.uniform() < 0.9;
      d_pred.valid[i] = rng.uniform() < 0.9;
    }
    const auto eq = [](const std::optional<double>& a,
                       const std::optional<double>& b) {
      return a.has_value() == b.has_value() && (!a || *a == *b);
    };
    const auto got = occlusion_iou(m, d_virtual, d_real);
    const auto want = reference::occlusion_iou(m, d_virtual, d_real);
    if (got.has_value() != want.has_value() ||
        (got && !(eq(got->plus, want->plus) && eq(got->minus, want->minus) &&
                  eq(got->all, want->all) && eq(got->surface, want->surface) &&
                  eq(got->boundary, want->boundary))))
      mismatches += 1;

    const auto dm = depth_metrics(d_pred, d_real);
    const auto dref = reference::depth_metrics(d_pred, d_real);
    if (dm.has_value() != dref.has_value() ||
        (dm && !(dm->abs_diff == dref->abs_diff &&
                 dm->abs_rel == dref->abs_rel && dm->sq_rel == dref->sq_rel &&
                 dm->rmse == dref->rmse && dm->log_rmse == dref->log_rmse &&
                 dm->delta_105 == dref->delta_105 &&
                 dm->delta_110 == dref->delta_110 &&
                 dm->delta_125 == dref->delta_125)))
      mismatches += 1;
  }
  std::cout << "metric brute-force suite:    " << mismatches
            << " mismatches over 100 instances"
            << (mismatches == 0 ? "  [ok]" : "  [FAIL]") << "\n";
  ok = ok && mismatches == 0;

  std::cout << "selftest " << (ok ? "passed" : "FAILED") << " in "
            << seconds_since(t0) << " s\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"implicit-depth occlusion compositing at desk scale"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate synthetic sequences");
  uint64_t synth_seed = 0;
  int synth_scenes = 4, synth_frames = 40, width = 96, height = 64;
  SceneGenConfig gen;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "base seed");
  synth->add_option("--scenes", synth_scenes, "number of scenes");
  synth->add_option("--frames", synth_frames, "frames per sequence");
  synth->add_option("--width", width, "image width");
  synth->add_option("--height", height, "image height");
  synth->add_option("--min-primitives", gen.min_primitives,
                    "min primitives per scene");
  synth->add_option("--max-primitives", gen.max_primitives,
                    "max primitives per scene");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train the implicit model");
  TrainCli train_cli;
  train_cli.add_options(train);
  auto* baseline =
      app.add_subcommand("train-baseline", "train the regression baseline");
  TrainCli baseline_cli;
  baseline_cli.add_options(baseline);

  auto* eocc = app.add_subcommand("eval-occlusion", "plane-sweep IoU report");
  std::string eocc_model, eocc_data, eocc_val, eocc_out;
  std::string eocc_planes = "0.5:5.0:0.5";
  int eocc_stride = 1;
  bool eocc_temporal = false;
  eocc->add_option("--model", eocc_model)->required();
  eocc->add_option("--data", eocc_data)->required();
  eocc->add_option("--val", eocc_val, "mini-val set for threshold selection");
  eocc->add_option("--planes", eocc_planes, "plane grid min:max:step");
  eocc->add_option("--keyframe-stride", eocc_stride);
  eocc->add_flag("--temporal", eocc_temporal, "roll masks out temporally");
  eocc->add_option("--out", eocc_out)->required();

  auto* edep = app.add_subcommand("eval-depth", "binary-search depth metrics");
  std::string edep_model, edep_data, edep_out;
  BinarySearchConfig edep_search;
  int edep_stride = 1;
  edep->add_option("--model", edep_model)->required();
  edep->add_option("--data", edep_data)->required();
  edep->add_option("--search-steps", edep_search.steps);
  edep->add_option("--d-min", edep_search.d_min);
  edep->add_option("--d-max", edep_search.d_max);
  edep->add_option("--keyframe-stride", edep_stride);
  edep->add_option("--out", edep_out)->required();

  auto* etmp = app.add_subcommand("eval-temporal", "flicker score");
  std::string etmp_model, etmp_data, etmp_out;
  TemporalEvalConfig etmp_config;
  bool etmp_no_rollout = false;
  etmp->add_option("--model", etmp_model)->required();
  etmp->add_option("--data", etmp_data)->required();
  etmp->add_option("--subseq-len", etmp_config.subsequence_length);
  etmp->add_option("--warmup", etmp_config.warmup);
  etmp->add_flag("--no-temporal-rollout", etmp_no_rollout,
                 "feed -1 instead of the warped previous mask");
  etmp->add_option("--out", etmp_out)->required();

  auto* comp = app.add_subcommand("composite", "write masks and composites");
  std::string comp_model, comp_data, comp_out;
  double comp_depth = 2.0;
  bool comp_world = false;
  comp->add_option("--model", comp_model)->required();
  comp->add_option("--data", comp_data, "sequence directory")->required();
  comp->add_option("--plane-depth", comp_depth);
  comp->add_flag("--world-plane", comp_world,
                 "anchor the plane at the first camera");
  comp->add_option("--out", comp_out)->required();

  auto* extr = app.add_subcommand("extract-depth", "binary-search depth maps");
  std::string extr_model, extr_data, extr_out;
  BinarySearchConfig extr_search;
  extr->add_option("--model", extr_model)->required();
  extr->add_option("--data", extr_data, "sequence directory")->required();
  extr->add_option("--search-steps", extr_search.steps);
  extr->add_option("--d-min", extr_search.d_min);
  extr->add_option("--d-max", extr_search.d_max);
  extr->add_option("--out", extr_out)->required();

  auto* self = app.add_subcommand(
      "selftest", "gradient checks + metric brute-force suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_seed, synth_scenes, synth_frames, width, height,
                       gen, synth_out);
    if (train->parsed()) return cmd_train(train_cli, false);
    if (baseline->parsed()) return cmd_train(baseline_cli, true);
    if (eocc->parsed())
      return cmd_eval_occlusion(eocc_model, eocc_data, eocc_val, eocc_planes,
                                eocc_stride, eocc_temporal, eocc_out);
    if (edep->parsed())
      return cmd_eval_depth(edep_model, edep_data, edep_search, edep_stride,
                            edep_out);
    if (etmp->parsed()) {
      etmp_config.temporal_rollout = !etmp_no_rollout;
      if (!etmp_no_rollout) {
        // default to the mode the checkpoint was trained for
        const Checkpoint peek = load_checkpoint(etmp_model);
        if (peek.meta.contains("train_config"))
          etmp_config.temporal_rollout =
              peek.meta["train_config"].value("temporal_input", true);
      }
      return cmd_eval_temporal(etmp_model, etmp_data, etmp_config, etmp_out);
    }
    if (comp->parsed())
      return cmd_composite(comp_model, comp_data, comp_depth, comp_world,
                           comp_out);
    if (extr->parsed())
      return cmd_extract_depth(extr_model, extr_data, extr_search, extr_out);
    if (self->parsed()) return cmd_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
