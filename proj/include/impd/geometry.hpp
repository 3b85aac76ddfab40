#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "impd/common.hpp"

namespace impd {

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const;
};

// Rigid transform, camera-to-world. The camera looks along +z, x right,
// y down. rotation must be orthonormal with det +1.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Pose inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  Pose operator*(const Pose& rhs) const {
    Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  // Optical axis direction in world coordinates.
  Eigen::Vector3d forward() const { return rotation.col(2); }

  bool is_valid(double tol = 1e-6) const;
  void validate() const;
};

struct PixelLocation {
  double u = 0.0, v = 0.0;
};

// Per-pixel z-depth in meters. Valid entries are finite and > 0.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> values;   // row-major
  std::vector<uint8_t> valid;  // row-major, 1 = valid

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.0f, bool valid_fill = false)
      : width(w),
        height(h),
        values(size_t(w) * h, fill),
        valid(size_t(w) * h, valid_fill ? 1 : 0) {}

  size_t index(int x, int y) const { return size_t(y) * width + x; }
  float at(int x, int y) const { return values[index(x, y)]; }
  bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
  size_t pixel_count() const { return values.size(); }

  void validate() const;
};

// Virtual evaluation plane. Frontoparallel planes sit at a constant z-depth
// ahead of whichever camera renders them; world planes are anchored at a
// fixed distance along an anchor camera's look-at vector, with the normal
// facing back at that camera.
struct PlaneSpec {
  enum class Mode { kFrontoparallel, kFixedInWorld };

  Mode mode = Mode::kFrontoparallel;
  double distance = 1.0;
  Pose anchor;  // used in kFixedInWorld mode

  static PlaneSpec frontoparallel(double d) {
    PlaneSpec s;
    s.mode = Mode::kFrontoparallel;
    s.distance = d;
    return s;
  }

  static PlaneSpec fixed_in_world(const Pose& anchor, double d) {
    PlaneSpec s;
    s.mode = Mode::kFixedInWorld;
    s.anchor = anchor;
    s.distance = d;
    return s;
  }

  void validate() const;
};

// Maps p (with known z-depth in the frame at pose_t) to its location in the
// frame at pose_prev. Returns nullopt when the point falls behind the
// previous camera; callers substitute the -1 sentinel.
std::optional<PixelLocation> warp_location(const PixelLocation& p,
                                           double depth_at_p,
                                           const Pose& pose_t,
                                           const Pose& pose_prev,
                                           const CameraIntrinsics& K);

// Bilinear interpolation on a row-major scalar map. Exact on integer
// coordinates; returns oob_sentinel if any of the four neighbours lies
// outside the image.
double bilinear_sample(std::span<const float> map, int width, int height,
                       const PixelLocation& p, double oob_sentinel);

DepthMap render_plane_depth(const PlaneSpec& spec, const Pose& pose,
                            const CameraIntrinsics& K);

// Depth discontinuities: 3x3 Sobel magnitude over pixels whose full
// neighbourhood is valid, thresholded strictly above the per-image
// percentile (nearest-rank). A constant map yields an empty mask.
std::vector<uint8_t> sobel_edge_mask(const DepthMap& depth,
                                     double percentile = 0.95);

}  // namespace impd
