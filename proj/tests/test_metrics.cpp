#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "impd/metrics.hpp"
#include "impd/reference.hpp"

using namespace impd;

namespace {

OcclusionMasks full_region_masks(int w, int h) {
  OcclusionMasks m;
  m.width = w;
  m.height = h;
  m.y_pred.assign(size_t(w) * h, 0);
  m.y_gt.assign(size_t(w) * h, 0);
  m.region.assign(size_t(w) * h, 1);
  return m;
}

DepthMap constant_depth(int w, int h, float v) { return DepthMap(w, h, v, true); }

bool same(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || *a == *b;
}

}  // namespace

TEST_CASE("occlusion_iou: perfect prediction scores 100 everywhere") {
  OcclusionMasks m = full_region_masks(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      m.y_gt[size_t(y) * 8 + x] = m.y_pred[size_t(y) * 8 + x] = y < 4 ? 1 : 0;
  const DepthMap d_virtual = constant_depth(8, 8, 2.0f);
  const DepthMap d_real = constant_depth(8, 8, 2.0f);
  const auto iou = occlusion_iou(m, d_virtual, d_real);
  REQUIRE(iou.has_value());
  CHECK(*iou->plus == 100.0);
  CHECK(*iou->minus == 100.0);
  CHECK(*iou->all == 100.0);
}

TEST_CASE("occlusion_iou: all-false prediction against a half-true mask") {
  // brute-force pixel counting on an 8x8 grid: IoU+ = 32/64, IoU- = 0/32
  OcclusionMasks m = full_region_masks(8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) m.y_gt[size_t(y) * 8 + x] = 1;
  const DepthMap d = constant_depth(8, 8, 2.0f);
  const auto iou = occlusion_iou(m, d, d);
  REQUIRE(iou.has_value());
  CHECK(*iou->plus == 50.0);
  CHECK(*iou->minus == 0.0);
  CHECK(*iou->all == 0.0);  // harmonic mean with a zero side
}

TEST_CASE("occlusion_iou: a shifted edge hurts the boundary band most") {
  const int w = 100, h = 100;
  OcclusionMasks m = full_region_masks(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      m.y_gt[size_t(y) * w + x] = x < 50 ? 1 : 0;
      m.y_pred[size_t(y) * w + x] = x < 49 ? 1 : 0;  // 1 px shift
    }
  }
  const DepthMap d = constant_depth(w, h, 3.0f);
  const auto iou = occlusion_iou(m, d, d);
  REQUIRE(iou.has_value());
  REQUIRE(iou->boundary.has_value());
  CHECK(*iou->boundary < *iou->all);

  const auto ref = reference::occlusion_iou(m, d, d);
  REQUIRE(ref.has_value());
  CHECK(*iou->all == *ref->all);
  CHECK(*iou->boundary == *ref->boundary);
}

TEST_CASE("occlusion_iou: empty evaluation region is undefined") {
  OcclusionMasks m = full_region_masks(4, 4);
  std::fill(m.region.begin(), m.region.end(), uint8_t(0));
  const DepthMap d = constant_depth(4, 4, 1.0f);
  CHECK_FALSE(occlusion_iou(m, d, d).has_value());
}

TEST_CASE("occlusion_iou matches the brute-force reference on random "
          "instances") {
  Rng rng(123);
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
    DepthMap d_virtual(w, h), d_real(w, h);
    for (size_t i = 0; i < n; ++i) {
      m.y_pred[i] = rng.uniform() < 0.5;
      m.y_gt[i] = rng.uniform() < 0.5;
      m.region[i] = rng.uniform() < 0.8;
      d_virtual.values[i] = float(rng.uniform(0.5, 4.0));
      d_virtual.valid[i] = 1;
      d_real.values[i] = float(rng.uniform(0.5, 4.0));
      d_real.valid[i] = 1;
    }
    const auto got = occlusion_iou(m, d_virtual, d_real);
    const auto want = reference::occlusion_iou(m, d_virtual, d_real);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    CHECK(same(got->plus, want->plus));
    CHECK(same(got->minus, want->minus));
    CHECK(same(got->all, want->all));
    CHECK(same(got->surface, want->surface));
    CHECK(same(got->boundary, want->boundary));
    // harmonic-mean bounds: min <= 2ab/(a+b) <= 2*min, and never above max
    if (got->all) {
      const double lo = std::min(*got->plus, *got->minus);
      const double hi = std::max(*got->plus, *got->minus);
      CHECK(*got->all >= lo - 1e-12);
      CHECK(*got->all <= std::min(2.0 * lo, hi) + 1e-12);
    }
  }
}

TEST_CASE("aggregate_plane_ious two-level averaging") {
  using Row = std::vector<std::optional<double>>;
  CHECK(aggregate_plane_ious({Row{42.0}}) == 42.0);
  CHECK(aggregate_plane_ious({Row{100.0}, Row{50.0}}) == 75.0);
  // plane A frames {100, 0}, plane B {50} -> mean(50, 50) = 50
  CHECK(aggregate_plane_ious({Row{100.0, 0.0}, Row{50.0}}) == 50.0);
  // undefined entries are skipped
  CHECK(aggregate_plane_ious({Row{std::nullopt, 80.0}, Row{std::nullopt}}) ==
        80.0);
  CHECK_THROWS_AS(aggregate_plane_ious({Row{std::nullopt}}), Error);

  Rng rng(9);
  std::vector<Row> random;
  for (int p = 0; p < 5; ++p) {
    Row row;
    for (int f = 0; f < 7; ++f)
      row.push_back(rng.uniform() < 0.2
                        ? std::optional<double>()
                        : std::optional<double>(rng.uniform(0.0, 100.0)));
    random.push_back(row);
  }
  CHECK(aggregate_plane_ious(random) ==
        reference::aggregate_plane_ious(random));
}

TEST_CASE("depth_metrics hand values") {
  const DepthMap gt = constant_depth(6, 4, 2.0f);

  SUBCASE("identity") {
    const auto m = depth_metrics(gt, gt);
    REQUIRE(m.has_value());
    CHECK(m->abs_diff == 0.0);
    CHECK(m->abs_rel == 0.0);
    CHECK(m->sq_rel == 0.0);
    CHECK(m->rmse == 0.0);
    CHECK(m->log_rmse == 0.0);
    CHECK(m->delta_105 == 100.0);
    CHECK(m->delta_125 == 100.0);
  }

  SUBCASE("uniform 10% overshoot") {
    DepthMap pred = gt;
    for (float& v : pred.values) v *= 1.1f;
    const auto m = depth_metrics(pred, gt);
    REQUIRE(m.has_value());
    CHECK(m->abs_rel == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(m->delta_105 == 0.0);
    CHECK(m->delta_125 == 100.0);
  }

  SUBCASE("2.0 vs 2.5 hand numbers") {
    const DepthMap pred = constant_depth(6, 4, 2.5f);
    const auto m = depth_metrics(pred, gt);
    REQUIRE(m.has_value());
    CHECK(m->abs_diff == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(m->sq_rel == doctest::Approx(0.125).epsilon(1e-6));
    CHECK(m->rmse == doctest::Approx(0.5).epsilon(1e-6));
  }

  SUBCASE("delta metrics are symmetric in pred and gt") {
    Rng rng(4);
    DepthMap a(5, 5), b(5, 5);
    for (size_t i = 0; i < a.pixel_count(); ++i) {
      a.values[i] = float(rng.uniform(0.5, 5.0));
      b.values[i] = float(rng.uniform(0.5, 5.0));
      a.valid[i] = b.valid[i] = 1;
    }
    const auto ab = depth_metrics(a, b);
    const auto ba = depth_metrics(b, a);
    CHECK(ab->delta_105 == ba->delta_105);
    CHECK(ab->delta_110 == ba->delta_110);
    CHECK(ab->delta_125 == ba->delta_125);
  }

  SUBCASE("no overlapping valid pixels is undefined") {
    DepthMap pred(6, 4);
    CHECK_FALSE(depth_metrics(pred, gt).has_value());
  }

  SUBCASE("invariant to pixel ordering") {
    Rng rng(6);
    DepthMap pred(5, 4), base(5, 4);
    for (size_t i = 0; i < pred.pixel_count(); ++i) {
      pred.values[i] = float(rng.uniform(0.5, 5.0));
      base.values[i] = float(rng.uniform(0.5, 5.0));
      pred.valid[i] = base.valid[i] = 1;
    }
    DepthMap pred_rev = pred, base_rev = base;
    std::reverse(pred_rev.values.begin(), pred_rev.values.end());
    std::reverse(base_rev.values.begin(), base_rev.values.end());
    const auto m = depth_metrics(pred, base);
    const auto r = depth_metrics(pred_rev, base_rev);
    CHECK(m->abs_rel == doctest::Approx(r->abs_rel).epsilon(1e-12));
    CHECK(m->rmse == doctest::Approx(r->rmse).epsilon(1e-12));
    CHECK(m->delta_110 == r->delta_110);
  }
}

TEST_CASE("depth_metrics matches the reference on random instances") {
  Rng rng(77);
  for (int it = 0; it < 100; ++it) {
    const int w = 2 + int(rng.uniform_index(15));
    const int h = 2 + int(rng.uniform_index(15));
    DepthMap pred(w, h), gt(w, h);
    for (size_t i = 0; i < pred.pixel_count(); ++i) {
      pred.values[i] = float(rng.uniform(0.3, 6.0));
      gt.values[i] = float(rng.uniform(0.3, 6.0));
      pred.valid[i] = rng.uniform() < 0.9;
      gt.valid[i] = rng.uniform() < 0.9;
    }
    const auto got = depth_metrics(pred, gt);
    const auto want = reference::depth_metrics(pred, gt);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    CHECK(got->abs_diff == want->abs_diff);
    CHECK(got->abs_rel == want->abs_rel);
    CHECK(got->sq_rel == want->sq_rel);
    CHECK(got->rmse == want->rmse);
    CHECK(got->log_rmse == want->log_rmse);
    CHECK(got->delta_105 == want->delta_105);
    CHECK(got->delta_110 == want->delta_110);
    CHECK(got->delta_125 == want->delta_125);
  }
}

namespace {

// Static-camera fixture: every reprojected point lands on its own pixel.
Sequence static_sequence(int n_frames, int w = 8, int h = 6) {
  Sequence seq;
  seq.intrinsics = default_intrinsics(w, h);
  for (int t = 0; t < n_frames; ++t) {
    Frame f;
    f.rgb = Image(w, h, 3, 0.5f);
    f.depth_gt = DepthMap(w, h, 2.0f, true);
    f.pose = Pose::identity();
    f.timestamp = t;
    seq.frames.push_back(f);
  }
  return seq;
}

std::vector<CompositingMask> constant_masks(int n, int w, int h, float value) {
  std::vector<CompositingMask> masks;
  for (int t = 0; t < n; ++t) {
    CompositingMask m(w, h);
    std::fill(m.values.begin(), m.values.end(), value);
    std::fill(m.coverage.begin(), m.coverage.end(), uint8_t(1));
    masks.push_back(m);
  }
  return masks;
}

}  // namespace

TEST_CASE("temporal_score: constant, alternating and single-flip sequences") {
  const int frames = 15, warmup = 2;  // 13 scored frames, 12 transitions
  const Sequence seq = static_sequence(frames);

  auto masks = constant_masks(frames, 8, 6, 1.0f);
  CHECK(*temporal_score(masks, seq, 0.5, warmup) == 0.0);

  for (int t = 0; t < frames; ++t)
    std::fill(masks[size_t(t)].values.begin(), masks[size_t(t)].values.end(),
              t % 2 == 0 ? 1.0f : 0.0f);
  CHECK(*temporal_score(masks, seq, 0.5, warmup) == doctest::Approx(1000.0));

  for (int t = 0; t < frames; ++t)
    std::fill(masks[size_t(t)].values.begin(), masks[size_t(t)].values.end(),
              t < 9 ? 1.0f : 0.0f);  // one visibility change
  CHECK(*temporal_score(masks, seq, 0.5, warmup) ==
        doctest::Approx(1000.0 / 12.0));
}

TEST_CASE("temporal_score: no trackable points is undefined") {
  const int frames = 6;
  const Sequence seq = static_sequence(frames);
  auto masks = constant_masks(frames, 8, 6, 1.0f);
  for (auto& m : masks)
    std::fill(m.coverage.begin(), m.coverage.end(), uint8_t(0));
  CHECK_FALSE(temporal_score(masks, seq, 0.5).has_value());
}

TEST_CASE("temporal_score input validation") {
  const Sequence seq = static_sequence(3);
  auto masks = constant_masks(3, 8, 6, 1.0f);
  CHECK_THROWS_AS(temporal_score(masks, seq, 0.5, 2), ConfigError);
  masks.pop_back();
  CHECK_THROWS_AS(temporal_score(masks, seq, 0.5, 0), ShapeError);
}

TEST_CASE("report JSON and table render defined fields") {
  MetricReport report;
  report.iou_all = 61.25;
  report.iou_surface = 33.5;
  report.iou_boundary = 35.75;
  DepthMetrics d;
  d.abs_diff = 0.12;
  d.abs_rel = 0.05;
  d.sq_rel = 0.01;
  d.rmse = 0.2;
  d.log_rmse = 0.07;
  d.delta_105 = 70.0;
  d.delta_110 = 88.0;
  d.delta_125 = 97.0;
  report.depth = d;

  const nlohmann::json j = report_to_json(report);
  CHECK(j.at("iou_all") == 61.25);
  CHECK(j.at("delta_1.05") == 70.0);
  CHECK_FALSE(j.contains("temporal_score"));

  const std::string table = report_table("ours", report);
  CHECK(table.find("IoU All") != std::string::npos);
  CHECK(table.find("61.25") != std::string::npos);
  CHECK(table.find("0.0500") != std::string::npos);
}
