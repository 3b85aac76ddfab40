#include <doctest.h>

#include <cmath>

#include "impd/inference.hpp"
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

Sequence micro_sequence(int n_frames = 3) {
  const SceneDescription scene = generate_scene(31, {});
  return generate_sequence(scene, 5, n_frames, default_intrinsics(48, 32));
}

}  // namespace

TEST_CASE("predict_mask: zero-weight model outputs 0.5 on coverage") {
  ImplicitModel model = make_implicit_model(tiny_config(), 1);
  for (Parameter* p : model.parameters())
    std::fill(p->value.begin(), p->value.end(), 0.0);

  const Sequence seq = micro_sequence();
  const Frame& frame = seq.frames[0];
  const DepthMap d_virtual = render_plane_depth(PlaneSpec::frontoparallel(2.0),
                                                frame.pose, seq.intrinsics);
  const CompositingMask mask = predict_mask(model, frame.rgb, d_virtual,
                                            nullptr, frame.pose, seq.intrinsics);
  for (size_t i = 0; i < mask.values.size(); ++i) {
    CHECK(mask.coverage[i]);
    CHECK(mask.values[i] == 0.5f);
  }
}

TEST_CASE("predict_mask rejects mismatched virtual depth resolution") {
  ImplicitModel model = make_implicit_model(tiny_config(), 1);
  const Sequence seq = micro_sequence();
  const DepthMap wrong(24, 16, 2.0f, true);
  CHECK_THROWS_AS(predict_mask(model, seq.frames[0].rgb, wrong, nullptr,
                               seq.frames[0].pose, seq.intrinsics),
                  ShapeError);
}

TEST_CASE("sample_previous: identity warp returns the previous value") {
  CompositingMask prev(8, 6);
  Rng rng(3);
  for (size_t i = 0; i < prev.values.size(); ++i) {
    prev.values[i] = float(rng.uniform());
    prev.coverage[i] = 1;
  }
  const CameraIntrinsics K = default_intrinsics(8, 6);
  const Pose pose = Pose::identity();
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(sample_previous(prev, pose, pose, K,
                            {double(x), double(y)}, 2.0) ==
            doctest::Approx(prev.values[prev.index(x, y)]));
}

TEST_CASE("sample_previous: unavailable neighbours give the -1 sentinel") {
  CompositingMask prev(8, 6);
  for (size_t i = 0; i < prev.values.size(); ++i) {
    prev.values[i] = 0.7f;
    prev.coverage[i] = 1;
  }
  prev.coverage[prev.index(3, 2)] = 0;
  const CameraIntrinsics K = default_intrinsics(8, 6);
  const Pose pose = Pose::identity();
  CHECK(sample_previous(prev, pose, pose, K, {3.0, 2.0}, 2.0) == -1.0);

  // warp that lands far outside the previous frame
  Pose far_prev;
  far_prev.translation = Eigen::Vector3d(50.0, 0.0, 0.0);
  CHECK(sample_previous(prev, pose, far_prev, K, {4.0, 3.0}, 2.0) == -1.0);

  // point behind the previous camera is unwarpable
  Pose ahead;
  ahead.translation = Eigen::Vector3d(0.0, 0.0, 10.0);
  CHECK(sample_previous(prev, pose, ahead, K, {4.0, 3.0}, 2.0) == -1.0);
}

TEST_CASE("predict_mask with a previous mask equals manual sentinel feed when "
          "warps all fail") {
  ImplicitModel model = make_implicit_model(tiny_config(), 7);
  const Sequence seq = micro_sequence();
  const Frame& frame = seq.frames[1];
  const DepthMap d_virtual = render_plane_depth(PlaneSpec::frontoparallel(2.0),
                                                frame.pose, seq.intrinsics);

  CompositingMask prev_mask(seq.intrinsics.width, seq.intrinsics.height);
  std::fill(prev_mask.values.begin(), prev_mask.values.end(), 1.0f);
  std::fill(prev_mask.coverage.begin(), prev_mask.coverage.end(), uint8_t(1));
  PreviousPrediction prev;
  prev.mask = &prev_mask;
  prev.pose = Pose::identity();
  prev.pose.translation = Eigen::Vector3d(100.0, 0.0, 0.0);  // all warps miss

  const CompositingMask with_prev = predict_mask(
      model, frame.rgb, d_virtual, &prev, frame.pose, seq.intrinsics);
  const CompositingMask no_prev = predict_mask(
      model, frame.rgb, d_virtual, nullptr, frame.pose, seq.intrinsics);
  CHECK(with_prev.values == no_prev.values);
}

TEST_CASE("composite identities") {
  const Sequence seq = micro_sequence();
  const Image& real = seq.frames[0].rgb;
  Image virtual_rgb(real.width, real.height, 3, 0.8f);

  CompositingMask ones(real.width, real.height);
  std::fill(ones.values.begin(), ones.values.end(), 1.0f);
  std::fill(ones.coverage.begin(), ones.coverage.end(), uint8_t(1));
  const Image all_real = composite(real, virtual_rgb, ones);
  CHECK(all_real.data == real.data);  // bit exact

  CompositingMask zeros(real.width, real.height);
  std::fill(zeros.coverage.begin(), zeros.coverage.end(), uint8_t(1));
  const Image all_virtual = composite(real, virtual_rgb, zeros);
  CHECK(all_virtual.data == virtual_rgb.data);

  CompositingMask half(real.width, real.height);
  std::fill(half.values.begin(), half.values.end(), 0.5f);
  std::fill(half.coverage.begin(), half.coverage.end(), uint8_t(1));
  Image a(real.width, real.height, 3, 0.2f);
  Image b(real.width, real.height, 3, 0.8f);
  const Image mid = composite(a, b, half);
  for (const float v : mid.data) CHECK(v == doctest::Approx(0.5f));

  // idempotence in C when both images agree
  Rng rng(8);
  CompositingMask random_mask(real.width, real.height);
  for (size_t i = 0; i < random_mask.values.size(); ++i) {
    random_mask.values[i] = float(rng.uniform());
    random_mask.coverage[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  const Image same = composite(real, real, random_mask);
  for (size_t i = 0; i < same.data.size(); ++i)
    CHECK(same.data[i] == doctest::Approx(real.data[i]).epsilon(1e-6));
}

TEST_CASE("select_tau: a perfectly calibrated predictor picks 0.5") {
  // c = 1 exactly where the plane is behind the real surface
  const Sequence seq = micro_sequence();
  const Frame& frame = seq.frames[0];
  const DepthMap d_virtual = render_plane_depth(PlaneSpec::frontoparallel(2.5),
                                                frame.pose, seq.intrinsics);
  CompositingMask mask(d_virtual.width, d_virtual.height);
  for (size_t i = 0; i < mask.values.size(); ++i) {
    mask.coverage[i] = 1;
    mask.values[i] =
        d_virtual.values[i] >= frame.depth_gt.values[i] ? 1.0f : 0.0f;
  }
  const CalibrationFrame cf{&mask, &d_virtual, &frame.depth_gt};
  const std::vector<CalibrationFrame> frames = {cf};
  CHECK(select_tau(frames) == 0.5);

  // deterministic: same inputs, same answer
  CHECK(select_tau(frames) == select_tau(frames));
}

TEST_CASE("select_thresholds falls back to 0.5 without validation data") {
  ImplicitModel model = make_implicit_model(tiny_config(), 2);
  const ThresholdTable table = select_thresholds(model, {}, {1.0, 2.0, 3.0});
  for (const auto& [depth, tau] : table.tau_by_depth) CHECK(tau == 0.5);
  CHECK(table.lookup(2.2) == 0.5);
}

TEST_CASE("binary search: granularity and the step-oracle bound") {
  BinarySearchConfig config;  // M=12, [0.5, 8]
  CHECK((config.d_max - config.d_min) / std::pow(2.0, config.steps) ==
        doctest::Approx(0.00183105469).epsilon(1e-6));
  CHECK(std::pow(2.0, config.steps) == 4096.0);

  const double granularity =
      (config.d_max - config.d_min) / std::pow(2.0, config.steps);

  // constant-depth oracle
  const auto oracle3 = [](int, int, double d) { return d >= 3.0 ? 1.0 : 0.0; };
  const DepthMap flat = binary_search_depth_with(oracle3, 16, 12, config, 0.5);
  for (const float v : flat.values) CHECK(std::abs(v - 3.0) <= granularity);

  // per-pixel random oracle depths
  Rng rng(14);
  DepthMap gt(16, 12, 0.0f, true);
  for (float& v : gt.values) v = float(rng.uniform(0.6, 7.5));
  const auto oracle = [&](int x, int y, double d) {
    return d >= gt.at(x, y) ? 1.0 : 0.0;
  };
  const DepthMap pred = binary_search_depth_with(oracle, 16, 12, config, 0.5);
  for (size_t i = 0; i < pred.values.size(); ++i)
    CHECK(std::abs(pred.values[i] - gt.values[i]) <= granularity);

  // saturation below d_min clamps to the first cell
  const auto oracle_low = [](int, int, double) { return 1.0; };
  const DepthMap low = binary_search_depth_with(oracle_low, 4, 3, config, 0.5);
  for (const float v : low.values)
    CHECK(std::abs(v - config.d_min) <= granularity);
}

TEST_CASE("binary_search_depth on a zero-weight model returns the midpoint "
          "consistent with tau") {
  ImplicitModel model = make_implicit_model(tiny_config(), 3);
  for (Parameter* p : model.parameters())
    std::fill(p->value.begin(), p->value.end(), 0.0);
  const Sequence seq = micro_sequence();
  BinarySearchConfig config;
  // c = 0.5 everywhere; with tau = 0.4 every query says "real in front"
  const DepthMap down =
      binary_search_depth(model, seq.frames[0].rgb, config, 0.4);
  for (const float v : down.values)
    CHECK(v == doctest::Approx(config.d_min).epsilon(0.01));
  // with tau = 0.6 every query says "real behind"
  const DepthMap up = binary_search_depth(model, seq.frames[0].rgb, config, 0.6);
  for (const float v : up.values)
    CHECK(v == doctest::Approx(config.d_max).epsilon(0.01));
}

TEST_CASE("binary search inverse-depth spacing stays within its granularity") {
  BinarySearchConfig config;
  config.spacing = BinarySearchConfig::Spacing::kInverseDepth;
  const auto oracle = [](int, int, double d) { return d >= 3.0 ? 1.0 : 0.0; };
  const DepthMap pred = binary_search_depth_with(oracle, 8, 6, config, 0.5);
  // inverse-depth cell width around 3 m: |d(1/g)|^-1 * cell = g^2 * cell
  const double cell = (1.0 / config.d_min - 1.0 / config.d_max) / 4096.0;
  for (const float v : pred.values)
    CHECK(std::abs(v - 3.0) <= 9.0 * cell * 1.5);
}

TEST_CASE("blended_mask band algebra") {
  DepthMap d_virtual(4, 3, 2.0f, true);
  DepthMap d_pred(4, 3, 2.0f, true);
  CHECK(blended_mask(d_pred, d_virtual).values[0] == 0.5f);

  // real closer by half a band: fully real
  std::fill(d_pred.values.begin(), d_pred.values.end(), 2.0f - 0.1f);
  CHECK(blended_mask(d_pred, d_virtual, 0.2).values[0] == 1.0f);

  // real a full band behind: fully virtual
  std::fill(d_pred.values.begin(), d_pred.values.end(), 2.0f + 0.2f);
  CHECK(blended_mask(d_pred, d_virtual, 0.2).values[0] == 0.0f);
}

TEST_CASE("rollout_temporal base cases") {
  ImplicitModel model = make_implicit_model(tiny_config(), 9);
  const Sequence seq = micro_sequence(4);
  const PlaneSpec plane = PlaneSpec::frontoparallel(2.0);

  SUBCASE("single frame uses the sentinel") {
    Sequence one;
    one.intrinsics = seq.intrinsics;
    one.frames.push_back(seq.frames[0]);
    const auto masks = rollout_temporal(model, one, plane);
    REQUIRE(masks.size() == 1);
    const DepthMap d_virtual = render_plane_depth(plane, one.frames[0].pose,
                                                  one.intrinsics);
    const CompositingMask direct =
        predict_mask(model, one.frames[0].rgb, d_virtual, nullptr,
                     one.frames[0].pose, one.intrinsics);
    CHECK(masks[0].values == direct.values);
  }

  SUBCASE("static camera: the warp is the identity") {
    Sequence still;
    still.intrinsics = seq.intrinsics;
    still.frames.push_back(seq.frames[0]);
    still.frames.push_back(seq.frames[0]);
    const auto masks = rollout_temporal(model, still, plane);
    REQUIRE(masks.size() == 2);
    // second frame must match feeding the first mask directly at p
    const Frame& f = still.frames[1];
    const DepthMap d_virtual =
        render_plane_depth(plane, f.pose, still.intrinsics);
    PreviousPrediction prev{&masks[0], still.frames[0].pose};
    const CompositingMask expect = predict_mask(
        model, f.rgb, d_virtual, &prev, f.pose, still.intrinsics);
    CHECK(masks[1].values == expect.values);
    CHECK(masks[1].values != masks[0].values);  // prev input changes outputs
  }

  SUBCASE("deterministic") {
    const auto a = rollout_temporal(model, seq, plane);
    const auto b = rollout_temporal(model, seq, plane);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].values == b[i].values);
  }
}

TEST_CASE("predict_mask is invariant to the stride schedule on constant "
          "input") {
  ModelConfig c1 = tiny_config();
  c1.strides = {1, 1, 1, 1};
  ModelConfig c2 = tiny_config();
  c2.strides = {2, 2, 1, 1};

  ImplicitModel m1 = make_implicit_model(c1, 21);
  ImplicitModel m2 = make_implicit_model(c2, 21);
  // same parameter values; only the stride schedule differs
  const auto p1 = m1.parameters();
  auto p2 = m2.parameters();
  for (size_t i = 0; i < p1.size(); ++i) p2[i]->value = p1[i]->value;

  const Image constant(32, 24, 3, 0.4f);
  const DepthMap d_virtual(32, 24, 2.0f, true);
  const CameraIntrinsics K = default_intrinsics(32, 24);
  const CompositingMask a =
      predict_mask(m1, constant, d_virtual, nullptr, Pose::identity(), K);
  const CompositingMask b =
      predict_mask(m2, constant, d_virtual, nullptr, Pose::identity(), K);
  REQUIRE(a.values.size() == b.values.size());
  for (size_t i = 0; i < a.values.size(); ++i)
    CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
}

TEST_CASE("predict_depth stays within the head bounds") {
  RegressionModel model = make_regression_model(tiny_config(), 2);
  const Sequence seq = micro_sequence();
  const DepthMap pred = predict_depth(model, seq.frames[0].rgb);
  for (size_t i = 0; i < pred.values.size(); ++i) {
    CHECK(pred.valid[i]);
    CHECK(pred.values[i] >= float(RegressionModel::kMinDepth));
    CHECK(pred.values[i] <= float(RegressionModel::kMaxDepth));
  }
}
