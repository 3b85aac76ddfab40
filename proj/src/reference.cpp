#include "impd/reference.hpp"

#include <cmath>

namespace impd::reference {

namespace {

// IoU of one class by explicit membership tests on every pixel.
std::optional<double> naive_class_iou(const OcclusionMasks& m,
                                      const std::vector<uint8_t>& region,
                                      bool positive_class) {
  int64_t inter = 0, uni = 0, region_pixels = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const size_t i = size_t(y) * m.width + x;
      if (!region[i]) continue;
      region_pixels += 1;
      const bool in_pred = (m.y_pred[i] != 0) == positive_class;
      const bool in_gt = (m.y_gt[i] != 0) == positive_class;
      if (in_pred && in_gt) inter += 1;
      if (in_pred || in_gt) uni += 1;
    }
  }
  if (region_pixels == 0) return std::nullopt;
  if (uni == 0) return 100.0;
  return 100.0 * double(inter) / double(uni);
}

std::optional<double> naive_iou_all(const OcclusionMasks& m,
                                    const std::vector<uint8_t>& region) {
  const auto plus = naive_class_iou(m, region, false);
  const auto minus = naive_class_iou(m, region, true);
  if (!plus || !minus) return std::nullopt;
  const double a = *plus, b = *minus;
  return (a + b) == 0.0 ? 0.0 : 2.0 * a * b / (a + b);
}

bool is_gt_boundary_pixel(const OcclusionMasks& m, int x, int y) {
  const size_t i = size_t(y) * m.width + x;
  if (!m.region[i]) return false;
  const bool v = m.y_gt[i] != 0;
  const int offsets[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (const auto& d : offsets) {
    const int nx = x + d[0], ny = y + d[1];
    if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
    const size_t n = size_t(ny) * m.width + nx;
    if (m.region[n] && (m.y_gt[n] != 0) != v) return true;
  }
  return false;
}

}  // namespace

std::optional<IouBreakdown> occlusion_iou(const OcclusionMasks& m,
                                          const DepthMap& d_virtual,
                                          const DepthMap& d_real,
                                          int boundary_px,
                                          double surface_band) {
  bool any = false;
  for (const uint8_t r : m.region) any = any || r;
  if (!any) return std::nullopt;

  IouBreakdown out;
  out.plus = naive_class_iou(m, m.region, false);
  out.minus = naive_class_iou(m, m.region, true);
  {
    const double a = *out.plus, b = *out.minus;
    out.all = (a + b) == 0.0 ? 0.0 : 2.0 * a * b / (a + b);
  }

  std::vector<uint8_t> surface(m.region.size(), 0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const size_t i = size_t(y) * m.width + x;
      if (!m.region[i]) continue;
      const double g = d_real.values[i];
      if (std::abs(double(d_virtual.values[i]) - g) <= surface_band * g)
        surface[i] = 1;
    }
  }
  out.surface = naive_iou_all(m, surface);

  // Chebyshev distance to the nearest boundary pixel by exhaustive search.
  std::vector<uint8_t> band(m.region.size(), 0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const size_t i = size_t(y) * m.width + x;
      if (!m.region[i]) continue;
      bool near_boundary = false;
      for (int by = 0; by < m.height && !near_boundary; ++by) {
        for (int bx = 0; bx < m.width && !near_boundary; ++bx) {
          if (!is_gt_boundary_pixel(m, bx, by)) continue;
          if (std::max(std::abs(bx - x), std::abs(by - y)) <= boundary_px)
            near_boundary = true;
        }
      }
      if (near_boundary) band[i] = 1;
    }
  }
  out.boundary = naive_iou_all(m, band);
  return out;
}

double aggregate_plane_ious(
    const std::vector<std::vector<std::optional<double>>>& per_plane_frames) {
  std::vector<double> plane_means;
  for (const auto& frames : per_plane_frames) {
    std::vector<double> defined;
    for (const auto& f : frames)
      if (f) defined.push_back(*f);
    if (defined.empty()) continue;
    double sum = 0.0;
    for (const double v : defined) sum += v;
    plane_means.push_back(sum / double(defined.size()));
  }
  if (plane_means.empty())
    throw Error("reference aggregate: every entry is undefined");
  double sum = 0.0;
  for (const double v : plane_means) sum += v;
  return sum / double(plane_means.size());
}

std::optional<DepthMetrics> depth_metrics(const DepthMap& pred,
                                          const DepthMap& gt) {
  std::vector<size_t> eval_pixels;
  for (size_t i = 0; i < gt.pixel_count(); ++i)
    if (gt.valid[i] && pred.valid[i]) eval_pixels.push_back(i);
  if (eval_pixels.empty()) return std::nullopt;
  const double n = double(eval_pixels.size());

  DepthMetrics m;
  for (const size_t i : eval_pixels)
    m.abs_diff += std::abs(double(pred.values[i]) - double(gt.values[i]));
  m.abs_diff /= n;
  for (const size_t i : eval_pixels)
    m.abs_rel += std::abs(double(pred.values[i]) - double(gt.values[i])) /
                 double(gt.values[i]);
  m.abs_rel /= n;
  for (const size_t i : eval_pixels) {
    const double diff = double(pred.values[i]) - double(gt.values[i]);
    m.sq_rel += diff * diff / double(gt.values[i]);
  }
  m.sq_rel /= n;
  for (const size_t i : eval_pixels) {
    const double diff = double(pred.values[i]) - double(gt.values[i]);
    m.rmse += diff * diff;
  }
  m.rmse = std::sqrt(m.rmse / n);
  for (const size_t i : eval_pixels) {
    const double diff =
        std::log(double(pred.values[i])) - std::log(double(gt.values[i]));
    m.log_rmse += diff * diff;
  }
  m.log_rmse = std::sqrt(m.log_rmse / n);
  int64_t c105 = 0, c110 = 0, c125 = 0;
  for (const size_t i : eval_pixels) {
    const double ratio = std::max(double(pred.values[i]) / double(gt.values[i]),
                                  double(gt.values[i]) / double(pred.values[i]));
    if (ratio < 1.05) c105 += 1;
    if (ratio < 1.10) c110 += 1;
    if (ratio < 1.25) c125 += 1;
  }
  m.delta_105 = 100.0 * double(c105) / n;
  m.delta_110 = 100.0 * double(c110) / n;
  m.delta_125 = 100.0 * double(c125) / n;
  return m;
}

}  // namespace impd::reference
