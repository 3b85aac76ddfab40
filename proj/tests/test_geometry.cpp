#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "impd/geometry.hpp"

using namespace impd;

namespace {

CameraIntrinsics test_intrinsics() {
  CameraIntrinsics K;
  K.fx = K.fy = 100.0;
  K.cx = 48.0;
  K.cy = 32.0;
  K.width = 96;
  K.height = 64;
  return K;
}

Pose rotated_pose(double angle, const Eigen::Vector3d& axis,
                  const Eigen::Vector3d& t) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  p.translation = t;
  return p;
}

}  // namespace

TEST_CASE("warp_location identity relative motion returns the same pixel") {
  const CameraIntrinsics K = test_intrinsics();
  const Pose pose = rotated_pose(0.3, {0.2, 1.0, 0.1}, {1.0, -0.5, 2.0});
  const PixelLocation p{31.25, 50.5};
  const auto warped = warp_location(p, 2.7, pose, pose, K);
  REQUIRE(warped.has_value());
  CHECK(warped->u == doctest::Approx(p.u).epsilon(1e-12));
  CHECK(warped->v == doctest::Approx(p.v).epsilon(1e-12));
}

TEST_CASE("warp_location pinhole translation: u shifts by -fx*tx/z") {
  const CameraIntrinsics K = test_intrinsics();
  Pose prev;
  prev.translation = Eigen::Vector3d(0.1, 0.0, 0.0);
  const PixelLocation p{50.0, 30.0};
  const auto warped = warp_location(p, 2.0, Pose::identity(), prev, K);
  REQUIRE(warped.has_value());
  // hand pinhole: u' = u - fx * tx / z = 50 - 100*0.1/2 = 45
  CHECK(warped->u == doctest::Approx(45.0).epsilon(1e-12));
  CHECK(warped->v == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("warp_location signals unwarpable behind the previous camera") {
  const CameraIntrinsics K = test_intrinsics();
  Pose prev;
  prev.translation = Eigen::Vector3d(0.0, 0.0, 5.0);  // ahead of the point
  const auto warped =
      warp_location(PixelLocation{48.0, 32.0}, 2.0, Pose::identity(), prev, K);
  CHECK_FALSE(warped.has_value());
}

TEST_CASE("warp_location round trip through the inverse pose") {
  const CameraIntrinsics K = test_intrinsics();
  Rng rng(7);
  for (int it = 0; it < 100; ++it) {
    const Pose pose_t = rotated_pose(rng.uniform(-0.1, 0.1),
                                     {rng.normal(), rng.normal(), rng.normal()},
                                     {rng.uniform(-0.2, 0.2),
                                      rng.uniform(-0.2, 0.2),
                                      rng.uniform(-0.2, 0.2)});
    const Pose pose_prev = rotated_pose(rng.uniform(-0.1, 0.1),
                                        {rng.normal(), rng.normal(), rng.normal()},
                                        {rng.uniform(-0.2, 0.2),
                                         rng.uniform(-0.2, 0.2),
                                         rng.uniform(-0.2, 0.2)});
    const PixelLocation p{rng.uniform(10, 85), rng.uniform(10, 55)};
    const double depth = rng.uniform(1.0, 4.0);
    const auto fwd = warp_location(p, depth, pose_t, pose_prev, K);
    if (!fwd) continue;
    // depth of the warped point in the previous frame
    const Eigen::Vector3d x_cam((p.u - K.cx) / K.fx * depth,
                                (p.v - K.cy) / K.fy * depth, depth);
    const double depth_prev =
        (pose_prev.inverse() * pose_t).apply(x_cam).z();
    const auto back = warp_location(*fwd, depth_prev, pose_prev, pose_t, K);
    REQUIRE(back.has_value());
    CHECK(std::abs(back->u - p.u) < 1e-4);
    CHECK(std::abs(back->v - p.v) < 1e-4);
  }
}

TEST_CASE("bilinear_sample exact on grid, linear between, sentinel outside") {
  const int w = 4, h = 3;
  std::vector<float> map(size_t(w) * h, 0.0f);
  map[size_t(1) * w + 2] = 7.0f;  // (x=2, y=1)
  CHECK(bilinear_sample(map, w, h, {2.0, 1.0}, -1.0) == doctest::Approx(7.0));

  std::vector<float> ramp = {0.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f,
                             0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
  CHECK(bilinear_sample(ramp, w, h, {0.5, 0.0}, -1.0) == doctest::Approx(0.5));

  CHECK(bilinear_sample(map, w, h, {-3.0, 0.0}, -1.0) == doctest::Approx(-1.0));
  CHECK(bilinear_sample(map, w, h, {0.0, 2.5}, -1.0) == doctest::Approx(-1.0));

  // exact at the far corner as well
  map[size_t(2) * w + 3] = 3.0f;
  CHECK(bilinear_sample(map, w, h, {3.0, 2.0}, -1.0) == doctest::Approx(3.0));
}

TEST_CASE("bilinear_sample is linear along each axis") {
  Rng rng(3);
  const int w = 6, h = 5;
  std::vector<float> map(size_t(w) * h);
  for (float& v : map) v = float(rng.uniform());
  for (int it = 0; it < 200; ++it) {
    const int x0 = int(rng.uniform_index(w - 1));
    const int y = int(rng.uniform_index(h));
    const double a = rng.uniform();
    const double interp = bilinear_sample(map, w, h, {x0 + a, double(y)}, -1.0);
    const double expect = (1.0 - a) * map[size_t(y) * w + x0] +
                          a * map[size_t(y) * w + x0 + 1];
    CHECK(interp == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("render_plane_depth frontoparallel is constant and pose invariant") {
  const CameraIntrinsics K = test_intrinsics();
  const PlaneSpec plane = PlaneSpec::frontoparallel(3.0);
  const DepthMap d0 = render_plane_depth(plane, Pose::identity(), K);
  for (size_t i = 0; i < d0.pixel_count(); ++i) {
    REQUIRE(d0.valid[i]);
    REQUIRE(d0.values[i] == 3.0f);
  }
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    const Pose pose = rotated_pose(rng.uniform(-0.5, 0.5),
                                   {rng.normal(), rng.normal(), rng.normal()},
                                   {rng.normal(), rng.normal(), rng.normal()});
    const DepthMap d = render_plane_depth(plane, pose, K);
    CHECK(d.values == d0.values);
    CHECK(d.valid == d0.valid);
  }
}

TEST_CASE("render_plane_depth world mode from the anchor pose") {
  const CameraIntrinsics K = test_intrinsics();
  const Pose anchor = rotated_pose(0.2, {0.0, 1.0, 0.0}, {0.3, -0.1, 0.6});
  const PlaneSpec plane = PlaneSpec::fixed_in_world(anchor, 2.0);
  const DepthMap d = render_plane_depth(plane, anchor, K);
  for (size_t i = 0; i < d.pixel_count(); ++i) {
    REQUIRE(d.valid[i]);
    CHECK(d.values[i] == doctest::Approx(2.0).epsilon(1e-9));
  }
}

TEST_CASE("render_plane_depth world mode after moving toward the plane") {
  const CameraIntrinsics K = test_intrinsics();
  const Pose anchor = Pose::identity();
  const PlaneSpec plane = PlaneSpec::fixed_in_world(anchor, 2.0);
  Pose moved = anchor;
  moved.translation += 0.5 * anchor.forward();
  const DepthMap d = render_plane_depth(plane, moved, K);
  // ray-plane by hand: the plane sits at z=2, the camera moved to z=0.5
  for (size_t i = 0; i < d.pixel_count(); ++i) {
    REQUIRE(d.valid[i]);
    CHECK(d.values[i] == doctest::Approx(1.5).epsilon(1e-9));
  }
}

TEST_CASE("render_plane_depth marks pixels that miss the plane invalid") {
  const CameraIntrinsics K = test_intrinsics();
  const Pose anchor = Pose::identity();
  const PlaneSpec plane = PlaneSpec::fixed_in_world(anchor, 2.0);
  // turn the camera 180 degrees: the plane is now behind it
  const Pose flipped = rotated_pose(M_PI, {0.0, 1.0, 0.0}, {0.0, 0.0, 0.0});
  const DepthMap d = render_plane_depth(plane, flipped, K);
  for (size_t i = 0; i < d.pixel_count(); ++i) CHECK_FALSE(d.valid[i]);
}

TEST_CASE("sobel_edge_mask constant depth yields an empty mask") {
  DepthMap depth(8, 8, 2.5f, true);
  const auto mask = sobel_edge_mask(depth, 0.95);
  for (const uint8_t m : mask) CHECK(m == 0);
}

TEST_CASE("sobel_edge_mask marks the columns adjacent to a vertical step") {
  // hand-computed on 5x5: columns 0-1 at 1m, columns 2-4 at 2m. Interior
  // responses: |gx| = 4 at x in {1,2}, 0 at x = 3; gy = 0.
  DepthMap depth(5, 5, 1.0f, true);
  for (int y = 0; y < 5; ++y)
    for (int x = 2; x < 5; ++x) depth.values[depth.index(x, y)] = 2.0f;
  const auto mask = sobel_edge_mask(depth, 0.3);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      const bool interior = x >= 1 && x <= 3 && y >= 1 && y <= 3;
      const bool expected = interior && (x == 1 || x == 2);
      CHECK(int(mask[depth.index(x, y)]) == int(expected));
    }
  }
}

TEST_CASE("sobel_edge_mask strict percentile bounds the selection") {
  Rng rng(21);
  for (int it = 0; it < 20; ++it) {
    DepthMap depth(12, 9);
    for (size_t i = 0; i < depth.pixel_count(); ++i) {
      depth.values[i] = float(rng.uniform(0.5, 5.0));
      depth.valid[i] = 1;
    }
    const auto mask = sobel_edge_mask(depth, 0.95);
    int selected = 0;
    for (const uint8_t m : mask) selected += m;
    const int computed = (12 - 2) * (9 - 2);
    CHECK(selected <= int(std::ceil(0.05 * computed)));
  }
}

TEST_CASE("sobel_edge_mask requires a 3x3 valid block") {
  DepthMap depth(5, 5, 1.0f, true);
  for (size_t i = 8; i < depth.pixel_count(); ++i) depth.valid[i] = 0;
  CHECK_THROWS_AS(sobel_edge_mask(depth), SamplingError);
}

TEST_CASE("pose and depth map invariants are enforced") {
  Pose bad;
  bad.rotation(0, 0) = 2.0;
  CHECK_FALSE(bad.is_valid());
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  DepthMap nan_map(3, 3, 1.0f, true);
  nan_map.values[4] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(nan_map.validate(), FormatError);

  DepthMap neg(3, 3, -1.0f, true);
  CHECK_THROWS_AS(neg.validate(), FormatError);
}
