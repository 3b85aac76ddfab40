#include <doctest.h>

#include <cmath>

#include "impd/nn/loss.hpp"
#include "impd/nn/model.hpp"
#include "impd/training.hpp"

using namespace impd;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_channels = 8;
  c.widths = {8, 8, 8, 8};
  c.strides = {2, 1, 1, 1};
  c.mlp_hidden = 16;
  return c;
}

Frame probe_frame(int width = 24, int height = 16) {
  const SceneDescription scene = generate_scene(12, {});
  const CameraIntrinsics K = default_intrinsics(width, height);
  Pose pose;
  pose.translation = Eigen::Vector3d(0.0, 0.0, -2.0);
  return render_frame(scene, pose, K);
}

}  // namespace

TEST_CASE("encode_features shape arithmetic") {
  ModelConfig c;  // defaults: K=32, stride 2
  ImplicitModel model = make_implicit_model(c, 0);
  const Image rgb(96, 64, 3, 0.25f);
  const FeatureMap fm = encode_features(model, rgb);
  CHECK(fm.channels == 32);
  CHECK(fm.width == 48);
  CHECK(fm.height == 32);
  CHECK(fm.stride == 2);
  for (Eigen::Index i = 0; i < fm.data.size(); ++i)
    CHECK(std::isfinite(fm.data(i)));

  const Image odd(95, 64, 3);
  CHECK_THROWS_AS(encode_features(model, odd), ShapeError);
  const Image wrong_channels(96, 64, 1);
  CHECK_THROWS_AS(encode_features(model, wrong_channels), ShapeError);
}

TEST_CASE("encode_features is deterministic and zero at zero weights") {
  ImplicitModel model = make_implicit_model(tiny_config(), 3);
  const Frame frame = probe_frame();
  const FeatureMap a = encode_features(model, frame.rgb);
  const FeatureMap b = encode_features(model, frame.rgb);
  CHECK(a.data == b.data);

  for (Parameter* p : model.parameters())
    std::fill(p->value.begin(), p->value.end(), 0.0);
  const FeatureMap z = encode_features(model, frame.rgb);
  CHECK(z.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp_forward: zero weights give 0.5, output always in (0,1)") {
  ImplicitModel model = make_implicit_model(tiny_config(), 4);
  std::vector<double> feature(8, 0.7);

  ImplicitModel zeroed = make_implicit_model(tiny_config(), 4);
  for (Parameter* p : zeroed.parameters())
    std::fill(p->value.begin(), p->value.end(), 0.0);
  CHECK(mlp_forward(zeroed, feature, 2.0, -1.0) == doctest::Approx(0.5));

  Rng rng(9);
  for (int it = 0; it < 100; ++it) {
    for (double& f : feature) f = rng.normal() * 2.0;
    const double c = mlp_forward(model, feature, rng.uniform(0.1, 8.0),
                                 rng.uniform() < 0.5 ? -1.0 : rng.uniform());
    CHECK(c > 0.0);
    CHECK(c < 1.0);
  }

  std::vector<double> wrong(5, 0.0);
  CHECK_THROWS_AS(mlp_forward(model, wrong, 1.0, -1.0), ShapeError);
}

TEST_CASE("mlp gradient matches central differences on every weight") {
  ImplicitModel model = make_implicit_model(tiny_config(), 5);
  const int k = model.config.feature_channels;

  Eigen::MatrixXd x(k + 2, 3);
  Rng rng(17);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  x(k, 0) = 1.3;
  x(k, 1) = 2.6;
  x(k, 2) = 0.4;
  x(k + 1, 0) = -1.0;
  x(k + 1, 1) = 0.25;
  x(k + 1, 2) = 0.9;

  // loss = sum of the sigmoid outputs, so dL/dlogit = c * (1 - c)
  const auto loss_fn = [&] {
    return mlp_forward_batch(model.mlp, x).sum();
  };
  std::vector<Parameter*> params = {&model.mlp.fc0.weight, &model.mlp.fc0.bias,
                                    &model.mlp.fc1.weight, &model.mlp.fc1.bias,
                                    &model.mlp.fc2.weight, &model.mlp.fc2.bias};
  zero_grads(params);
  MlpTrace trace;
  const Eigen::VectorXd prob = mlp_forward_batch(model.mlp, x, &trace);
  const Eigen::VectorXd d_logit =
      prob.array() * (1.0 - prob.array());
  mlp_backward_batch(model.mlp, trace, d_logit);

  size_t total = 0;
  for (const Parameter* p : params) total += p->size();
  const double max_rel =
      gradient_check_coords(params, loss_fn, int(total), 1, 1e-4);
  CHECK(max_rel < 1e-3);
}

TEST_CASE("bce_loss hand values") {
  CHECK(bce_loss(1.0 - 1e-7, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // clamp guard: c -> 0 with y = 0 stays finite and tiny
  CHECK(bce_loss(0.0, 0) == doctest::Approx(1e-7).epsilon(1e-2));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
}

TEST_CASE("edge_regularizer algebra") {
  std::vector<double> half(10, 0.5);
  CHECK(edge_regularizer(half) == 1.0);

  std::vector<double> confident = {0.0, 1.0, 1.0, 0.0};
  CHECK(edge_regularizer(confident) == 0.0);

  std::vector<double> mixed = {0.5, 0.5, 1.0, 1.0};
  CHECK(edge_regularizer(mixed) == 0.5);

  CHECK(edge_regularizer({}) == 0.0);
}

TEST_CASE("adam: fixed point at zero gradient, unit step size, determinism") {
  Parameter p;
  p.resize("scalar", {1});
  p.value[0] = 3.0;
  std::vector<Parameter*> params = {&p};

  AdamConfig config;
  config.lr = 0.01;
  adam_step(params, config);  // zero gradient
  CHECK(p.value[0] == 3.0);

  // constant gradient 1 from fresh state: the bias-corrected first step
  // moves by ~lr
  Parameter fresh;
  fresh.resize("fresh", {1});
  fresh.value[0] = 3.0;
  fresh.grad[0] = 1.0;
  std::vector<Parameter*> fresh_params = {&fresh};
  adam_step(fresh_params, config);
  CHECK(3.0 - fresh.value[0] == doctest::Approx(config.lr).epsilon(1e-6));
  CHECK(fresh.grad[0] == 0.0);  // gradients cleared

  Parameter q;
  q.resize("nan", {1});
  q.grad[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Parameter*> bad = {&q};
  CHECK_THROWS_WITH_AS(adam_step(bad, config),
                       doctest::Contains("'nan'"), OptimizationError);
}

TEST_CASE("full-model gradient check against finite differences") {
  TrainConfig config;
  config.model = tiny_config();
  const Frame frame = probe_frame();

  ImplicitModel implicit = make_implicit_model(config.model, 1);
  const double e_impl = gradient_check_implicit(implicit, frame, config, 60, 2);
  CHECK(e_impl < 1e-3);

  RegressionModel regression = make_regression_model(config.model, 1);
  const double e_reg =
      gradient_check_regression(regression, frame, config, 60, 2);
  CHECK(e_reg < 1e-3);
}

TEST_CASE("gradient check flags an injected gradient fault") {
  TrainConfig config;
  config.model = tiny_config();
  const Frame frame = probe_frame();
  ImplicitModel model = make_implicit_model(config.model, 1);

  const FrameStats stats = compute_frame_stats(frame);
  std::vector<Frame> frames{frame};
  const Image input = stack_context(frames, 0, 0);
  Rng rng(5);
  std::vector<QuerySample> samples(64);
  for (QuerySample& s : samples) s = sample_query(frame, stats, config, rng);

  auto params = model.parameters();
  zero_grads(params);
  implicit_loss(model, input, samples, config.lambda_reg, true);
  // corrupt one layer's analytic gradient
  for (double& g : model.mlp.fc0.weight.grad) g *= 2.0;

  const double err = gradient_check_coords(
      params,
      [&] {
        return implicit_loss(model, input, samples, config.lambda_reg, false)
            .total;
      },
      200, 3);
  CHECK(err > 1e-1);
}

TEST_CASE("parameters the loss never touches keep zero gradients") {
  ImplicitModel model = make_implicit_model(tiny_config(), 8);
  auto params = model.parameters();
  zero_grads(params);

  // a pure MLP loss leaves the encoder untouched
  Eigen::MatrixXd x(model.config.feature_channels + 2, 4);
  x.setConstant(0.3);
  MlpTrace trace;
  const Eigen::VectorXd prob = mlp_forward_batch(model.mlp, x, &trace);
  mlp_backward_batch(model.mlp, trace, Eigen::VectorXd::Ones(4));

  for (const Conv2d& conv : model.encoder.convs) {
    for (const double g : conv.weight.grad) CHECK(g == 0.0);
    for (const double g : conv.bias.grad) CHECK(g == 0.0);
  }
}

TEST_CASE("regression head keeps depth inside its bounds") {
  CHECK(regression_depth_from_preactivation(-100.0) ==
        doctest::Approx(RegressionModel::kMinDepth));
  CHECK(regression_depth_from_preactivation(100.0) ==
        doctest::Approx(RegressionModel::kMaxDepth));
  CHECK(regression_depth_from_preactivation(0.0) ==
        doctest::Approx(std::sqrt(RegressionModel::kMinDepth *
                                  RegressionModel::kMaxDepth)));
}

TEST_CASE("checkpoint round trip preserves weights and config") {
  const auto tmp = std::filesystem::temp_directory_path() / "impd_ckpt_test";
  std::filesystem::create_directories(tmp);

  ModelConfig c = tiny_config();
  c.context_frames = 1;
  ImplicitModel model = make_implicit_model(c, 77);
  nlohmann::json meta;
  meta["temporal_input"] = true;
  save_checkpoint(tmp / "m.ckpt", model, meta);

  const Checkpoint loaded = load_checkpoint(tmp / "m.ckpt");
  REQUIRE(loaded.kind == ModelKind::kImplicit);
  REQUIRE(loaded.implicit.has_value());
  CHECK(loaded.implicit->config == c);
  CHECK(loaded.meta.at("temporal_input") == true);
  const auto orig = model.parameters();
  const auto back = loaded.implicit->parameters();
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i]->size() == back[i]->size());
    for (size_t j = 0; j < orig[i]->size(); ++j)
      CHECK(back[i]->value[j] == double(float(orig[i]->value[j])));
  }

  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.ckpt"), FormatError);
  std::filesystem::remove_all(tmp);
}
