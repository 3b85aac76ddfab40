#include "impd/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace impd {

namespace {

// Class IoU over a region; empty union counts as a perfect 100.
std::optional<double> class_iou(const std::vector<uint8_t>& pred,
                                const std::vector<uint8_t>& gt,
                                const std::vector<uint8_t>& region,
                                bool positive_class) {
  int64_t inter = 0, uni = 0;
  bool any_region = false;
  for (size_t i = 0; i < region.size(); ++i) {
    if (!region[i]) continue;
    any_region = true;
    const bool p = (pred[i] != 0) == positive_class;
    const bool g = (gt[i] != 0) == positive_class;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (!any_region) return std::nullopt;
  if (uni == 0) return 100.0;
  return 100.0 * double(inter) / double(uni);
}

double harmonic_mean(double a, double b) {
  return (a + b) == 0.0 ? 0.0 : 2.0 * a * b / (a + b);
}

std::optional<double> region_iou_all(const OcclusionMasks& m,
                                     const std::vector<uint8_t>& region) {
  const auto plus = class_iou(m.y_pred, m.y_gt, region, false);
  const auto minus = class_iou(m.y_pred, m.y_gt, region, true);
  if (!plus || !minus) return std::nullopt;
  return harmonic_mean(*plus, *minus);
}

// Pixels of the GT mask adjacent (4-connectivity) to the opposite label,
// dilated by a Chebyshev radius.
std::vector<uint8_t> boundary_band(const OcclusionMasks& m, int radius) {
  const int w = m.width, h = m.height;
  std::vector<uint8_t> boundary(size_t(w) * h, 0);
  bool any = false;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = size_t(y) * w + x;
      if (!m.region[i]) continue;
      const bool v = m.y_gt[i] != 0;
      const auto differs = [&](int nx, int ny) {
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) return false;
        const size_t n = size_t(ny) * w + nx;
        return m.region[n] && (m.y_gt[n] != 0) != v;
      };
      if (differs(x - 1, y) || differs(x + 1, y) || differs(x, y - 1) ||
          differs(x, y + 1)) {
        boundary[i] = 1;
        any = true;
      }
    }
  }
  std::vector<uint8_t> band(size_t(w) * h, 0);
  if (!any) return band;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!boundary[size_t(y) * w + x]) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int nx = x + dx;
          if (nx < 0 || nx >= w) continue;
          band[size_t(ny) * w + nx] = 1;
        }
      }
    }
  }
  return band;
}

}  // namespace

OcclusionMasks make_occlusion_masks(const CompositingMask& mask, double tau,
                                    const DepthMap& d_virtual,
                                    const DepthMap& d_real) {
  if (mask.width != d_virtual.width || mask.height != d_virtual.height ||
      mask.width != d_real.width || mask.height != d_real.height)
    throw ShapeError("occlusion masks: dimension mismatch");
  OcclusionMasks out;
  out.width = mask.width;
  out.height = mask.height;
  const size_t n = mask.values.size();
  out.y_pred.assign(n, 0);
  out.y_gt.assign(n, 0);
  out.region.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (!mask.coverage[i] || !d_real.valid[i] || !d_virtual.valid[i]) continue;
    out.region[i] = 1;
    out.y_pred[i] = mask.values[i] > tau ? 1 : 0;
    out.y_gt[i] = d_virtual.values[i] >= d_real.values[i] ? 1 : 0;
  }
  return out;
}

std::optional<IouBreakdown> occlusion_iou(const OcclusionMasks& masks,
                                          const DepthMap& d_virtual,
                                          const DepthMap& d_real,
                                          int boundary_px,
                                          double surface_band) {
  if (int(masks.region.size()) != masks.width * masks.height ||
      masks.y_pred.size() != masks.region.size() ||
      masks.y_gt.size() != masks.region.size())
    throw ShapeError("occlusion_iou: inconsistent mask sizes");
  bool any = false;
  for (const uint8_t r : masks.region) any = any || r;
  if (!any) return std::nullopt;

  IouBreakdown out;
  out.plus = class_iou(masks.y_pred, masks.y_gt, masks.region, false);
  out.minus = class_iou(masks.y_pred, masks.y_gt, masks.region, true);
  out.all = harmonic_mean(*out.plus, *out.minus);

  std::vector<uint8_t> surface(masks.region.size(), 0);
  for (size_t i = 0; i < masks.region.size(); ++i) {
    if (!masks.region[i]) continue;
    const double g = d_real.values[i];
    if (std::abs(double(d_virtual.values[i]) - g) <= surface_band * g)
      surface[i] = 1;
  }
  out.surface = region_iou_all(masks, surface);

  std::vector<uint8_t> band = boundary_band(masks, boundary_px);
  for (size_t i = 0; i < band.size(); ++i) band[i] = band[i] && masks.region[i];
  out.boundary = region_iou_all(masks, band);
  return out;
}

double aggregate_plane_ious(
    const std::vector<std::vector<std::optional<double>>>& per_plane_frames) {
  double plane_sum = 0.0;
  int plane_count = 0;
  for (const auto& frames : per_plane_frames) {
    double frame_sum = 0.0;
    int frame_count = 0;
    for (const auto& v : frames) {
      if (!v) continue;
      frame_sum += *v;
      frame_count += 1;
    }
    if (frame_count == 0) continue;
    plane_sum += frame_sum / double(frame_count);
    plane_count += 1;
  }
  if (plane_count == 0)
    throw Error("aggregate_plane_ious: every entry is undefined");
  return plane_sum / double(plane_count);
}

std::optional<DepthMetrics> depth_metrics(const DepthMap& pred,
                                          const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("depth_metrics: dimension mismatch");
  DepthMetrics m;
  int64_t count = 0;
  for (size_t i = 0; i < gt.pixel_count(); ++i) {
    if (!gt.valid[i] || !pred.valid[i]) continue;
    const double d = pred.values[i];
    const double g = gt.values[i];
    const double diff = d - g;
    m.abs_diff += std::abs(diff);
    m.abs_rel += std::abs(diff) / g;
    m.sq_rel += diff * diff / g;
    m.rmse += diff * diff;
    const double log_diff = std::log(d) - std::log(g);
    m.log_rmse += log_diff * log_diff;
    const double ratio = std::max(d / g, g / d);
    m.delta_105 += ratio < 1.05 ? 1.0 : 0.0;
    m.delta_110 += ratio < 1.10 ? 1.0 : 0.0;
    m.delta_125 += ratio < 1.25 ? 1.0 : 0.0;
    count += 1;
  }
  if (count == 0) return std::nullopt;
  const double n = double(count);
  m.abs_diff /= n;
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.log_rmse = std::sqrt(m.log_rmse / n);
  m.delta_105 = 100.0 * m.delta_105 / n;
  m.delta_110 = 100.0 * m.delta_110 / n;
  m.delta_125 = 100.0 * m.delta_125 / n;
  return m;
}

std::optional<double> temporal_score(const std::vector<CompositingMask>& masks,
                                     const Sequence& seq, double tau,
                                     int warmup, int max_points) {
  if (masks.size() != seq.frames.size())
    throw ShapeError("temporal_score: one mask per frame required");
  if (int(seq.frames.size()) < warmup + 2)
    throw ConfigError("temporal_score: needs at least warmup + 2 frames");

  const Frame& first = seq.frames.front();
  const CameraIntrinsics& K = seq.intrinsics;

  // Deterministic strided subset of the first frame's surface points.
  std::vector<uint32_t> valid;
  for (size_t i = 0; i < first.depth_gt.pixel_count(); ++i)
    if (first.depth_gt.valid[i]) valid.push_back(uint32_t(i));
  if (valid.empty()) return std::nullopt;
  std::vector<Eigen::Vector3d> points;
  const size_t take = std::min<size_t>(valid.size(), size_t(max_points));
  for (size_t i = 0; i < take; ++i) {
    const uint32_t flat = valid[i * valid.size() / take];
    const int x = int(flat % uint32_t(first.depth_gt.width));
    const int y = int(flat / uint32_t(first.depth_gt.width));
    const double z = first.depth_gt.values[flat];
    const Eigen::Vector3d x_cam((x - K.cx) / K.fx * z, (y - K.cy) / K.fy * z, z);
    points.push_back(first.pose.apply(x_cam));
  }

  double rate_sum = 0.0;
  int scored_points = 0;
  for (const Eigen::Vector3d& world : points) {
    int observations = 0, flips = 0;
    bool have_last = false, last_visible = false;
    for (size_t t = size_t(warmup); t < seq.frames.size(); ++t) {
      const Pose inv = seq.frames[t].pose.inverse();
      const Eigen::Vector3d x_cam = inv.apply(world);
      if (x_cam.z() <= 0.0) continue;
      const int u = int(std::lround(K.fx * x_cam.x() / x_cam.z() + K.cx));
      const int v = int(std::lround(K.fy * x_cam.y() / x_cam.z() + K.cy));
      if (u < 0 || v < 0 || u >= masks[t].width || v >= masks[t].height)
        continue;
      const size_t idx = masks[t].index(u, v);
      if (!masks[t].coverage[idx]) continue;
      const bool visible = masks[t].values[idx] > tau;
      if (have_last && visible != last_visible) flips += 1;
      have_last = true;
      last_visible = visible;
      observations += 1;
    }
    if (observations >= 2) {
      rate_sum += double(flips) / double(observations - 1);
      scored_points += 1;
    }
  }
  if (scored_points == 0) return std::nullopt;
  return 1000.0 * rate_sum / double(scored_points);
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  const auto set = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  set("iou_all", report.iou_all);
  set("iou_surface", report.iou_surface);
  set("iou_boundary", report.iou_boundary);
  if (report.depth) {
    j["abs_diff"] = report.depth->abs_diff;
    j["abs_rel"] = report.depth->abs_rel;
    j["sq_rel"] = report.depth->sq_rel;
    j["rmse"] = report.depth->rmse;
    j["log_rmse"] = report.depth->log_rmse;
    j["delta_1.05"] = report.depth->delta_105;
    j["delta_1.10"] = report.depth->delta_110;
    j["delta_1.25"] = report.depth->delta_125;
  }
  set("temporal_score", report.temporal);
  return j;
}

std::string report_table(const std::string& row_label,
                         const MetricReport& report) {
  const auto num = [](const std::optional<double>& v, int width, int prec) {
    char buf[48];
    if (v)
      std::snprintf(buf, sizeof(buf), "%*.*f", width, prec, *v);
    else
      std::snprintf(buf, sizeof(buf), "%*s", width, "-");
    return std::string(buf);
  };
  char label[40];
  std::snprintf(label, sizeof(label), "%-18.18s", row_label.c_str());

  std::string out;
  out += "Method              IoU All  IoU Surface  IoU Boundary  Abs Diff"
         "  Abs Rel   Sq Rel     RMSE  d<1.05  Temporal\n";
  out += label;
  out += num(report.iou_all, 9, 2);
  out += num(report.iou_surface, 13, 2);
  out += num(report.iou_boundary, 14, 2);
  const auto depth_field = [&](double DepthMetrics::* field, int width,
                               int prec) {
    return num(report.depth ? std::optional<double>(report.depth.value().*field)
                            : std::nullopt,
               width, prec);
  };
  out += depth_field(&DepthMetrics::abs_diff, 10, 4);
  out += depth_field(&DepthMetrics::abs_rel, 9, 4);
  out += depth_field(&DepthMetrics::sq_rel, 9, 4);
  out += depth_field(&DepthMetrics::rmse, 9, 4);
  out += depth_field(&DepthMetrics::delta_105, 8, 2);
  out += num(report.temporal, 10, 2);
  out += "\n";
  return out;
}

}  // namespace impd
