#include "impd/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace impd {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw ConfigError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw ConfigError("intrinsics: image size must be positive");
}

bool Pose::is_valid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
    return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

void Pose::validate() const {
  if (!is_valid()) throw ConfigError("pose: rotation is not a proper rotation");
}

void DepthMap::validate() const {
  if (width <= 0 || height <= 0 || values.size() != size_t(width) * height ||
      valid.size() != values.size())
    throw ShapeError("depth map: inconsistent dimensions");
  for (size_t i = 0; i < values.size(); ++i) {
    if (valid[i] && (!std::isfinite(values[i]) || values[i] <= 0.0f))
      throw FormatError("depth map: valid entry is non-finite or <= 0");
  }
}

void PlaneSpec::validate() const {
  if (!(distance > 0.0)) throw ConfigError("plane: distance must be positive");
  if (mode == Mode::kFixedInWorld) anchor.validate();
}

std::optional<PixelLocation> warp_location(const PixelLocation& p,
                                           double depth_at_p,
                                           const Pose& pose_t,
                                           const Pose& pose_prev,
                                           const CameraIntrinsics& K) {
  const Eigen::Vector3d x_cam((p.u - K.cx) / K.fx * depth_at_p,
                              (p.v - K.cy) / K.fy * depth_at_p, depth_at_p);
  // relative transform: camera t -> camera t-1
  const Pose rel = pose_prev.inverse() * pose_t;
  const Eigen::Vector3d x_prev = rel.apply(x_cam);
  if (x_prev.z() <= 0.0) return std::nullopt;
  return PixelLocation{K.fx * x_prev.x() / x_prev.z() + K.cx,
                       K.fy * x_prev.y() / x_prev.z() + K.cy};
}

double bilinear_sample(std::span<const float> map, int width, int height,
                       const PixelLocation& p, double oob_sentinel) {
  if (map.empty() || width <= 0 || height <= 0)
    throw ShapeError("bilinear_sample: empty map");
  if (map.size() != size_t(width) * size_t(height))
    throw ShapeError("bilinear_sample: map size does not match dimensions");
  const double x0f = std::floor(p.u);
  const double y0f = std::floor(p.v);
  const int x0 = int(x0f), y0 = int(y0f);
  const int x1 = x0 + 1, y1 = y0 + 1;
  const double ax = p.u - x0f;
  const double ay = p.v - y0f;
  // On-grid coordinates only touch one row/column; treat the weight-zero
  // neighbour as inside so border pixels sample exactly.
  const bool need_x1 = ax > 0.0;
  const bool need_y1 = ay > 0.0;
  if (x0 < 0 || y0 < 0 || (need_x1 ? x1 : x0) >= width ||
      (need_y1 ? y1 : y0) >= height)
    return oob_sentinel;
  const auto at = [&](int x, int y) { return double(map[size_t(y) * width + x]); };
  const double v00 = at(x0, y0);
  const double v10 = need_x1 ? at(x1, y0) : v00;
  const double v01 = need_y1 ? at(x0, y1) : v00;
  const double v11 = need_x1 ? (need_y1 ? at(x1, y1) : v10) : v01;
  const double top = v00 * (1.0 - ax) + v10 * ax;
  const double bot = v01 * (1.0 - ax) + v11 * ax;
  return top * (1.0 - ay) + bot * ay;
}

DepthMap render_plane_depth(const PlaneSpec& spec, const Pose& pose,
                            const CameraIntrinsics& K) {
  spec.validate();
  K.validate();
  DepthMap out(K.width, K.height);
  if (spec.mode == PlaneSpec::Mode::kFrontoparallel) {
    std::fill(out.values.begin(), out.values.end(), float(spec.distance));
    std::fill(out.valid.begin(), out.valid.end(), uint8_t(1));
    return out;
  }
  const Eigen::Vector3d plane_point =
      spec.anchor.translation + spec.distance * spec.anchor.forward();
  const Eigen::Vector3d normal = spec.anchor.forward();
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      // Unnormalized camera ray with unit z, so the ray parameter is z-depth.
      const Eigen::Vector3d dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d dir_world = pose.rotation * dir_cam;
      const double denom = normal.dot(dir_world);
      if (std::abs(denom) < 1e-12) continue;
      const double s = normal.dot(plane_point - pose.translation) / denom;
      if (s <= 0.0) continue;
      out.values[out.index(x, y)] = float(s);
      out.valid[out.index(x, y)] = 1;
    }
  }
  return out;
}

std::vector<uint8_t> sobel_edge_mask(const DepthMap& depth, double percentile) {
  depth.validate();
  if (percentile < 0.0 || percentile > 1.0)
    throw ConfigError("sobel_edge_mask: percentile out of [0,1]");
  size_t n_valid = 0;
  for (const uint8_t v : depth.valid) n_valid += v;
  if (n_valid < 9) throw SamplingError("sobel_edge_mask: fewer than 3x3 valid pixels");

  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

  const int w = depth.width, h = depth.height;
  std::vector<float> response(size_t(w) * h, -1.0f);  // -1 = not computed
  std::vector<float> computed;
  computed.reserve(size_t(w) * h);
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      bool ok = true;
      double gx = 0.0, gy = 0.0;
      for (int dy = -1; dy <= 1 && ok; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!depth.is_valid(x + dx, y + dy)) {
            ok = false;
            break;
          }
          const double v = depth.at(x + dx, y + dy);
          gx += kx[dy + 1][dx + 1] * v;
          gy += ky[dy + 1][dx + 1] * v;
        }
      }
      if (!ok) continue;
      const float mag = float(std::hypot(gx, gy));
      response[depth.index(x, y)] = mag;
      computed.push_back(mag);
    }
  }

  std::vector<uint8_t> mask(size_t(w) * h, 0);
  if (computed.empty()) return mask;

  // Nearest-rank percentile, then a strict comparison so constant maps
  // produce an empty mask.
  std::sort(computed.begin(), computed.end());
  size_t rank = size_t(std::ceil(percentile * double(computed.size())));
  rank = std::clamp<size_t>(rank, 1, computed.size());
  const float threshold = computed[rank - 1];
  for (size_t i = 0; i < response.size(); ++i)
    if (response[i] > threshold) mask[i] = 1;
  return mask;
}

}  // namespace impd
