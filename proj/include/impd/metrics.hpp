#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "impd/inference.hpp"
#include "impd/scene.hpp"

namespace impd {

// Binary occlusion masks restricted to an evaluation region
// (virtual coverage AND valid ground-truth depth). true = the real scene
// occludes the virtual asset.
struct OcclusionMasks {
  int width = 0, height = 0;
  std::vector<uint8_t> y_pred, y_gt, region;
};

OcclusionMasks make_occlusion_masks(const CompositingMask& mask, double tau,
                                    const DepthMap& d_virtual,
                                    const DepthMap& d_real);

// Per-frame IoU breakdown, in percent. Sub-metrics restricted to an empty
// region are absent; a fully empty evaluation region yields nullopt.
struct IouBreakdown {
  std::optional<double> plus;      // visible virtual fragments
  std::optional<double> minus;     // occluded fragments
  std::optional<double> all;       // harmonic mean
  std::optional<double> surface;   // |D_virtual - D_real| <= 5% of D_real
  std::optional<double> boundary;  // within 7 px (Chebyshev) of the GT edge
};

std::optional<IouBreakdown> occlusion_iou(const OcclusionMasks& masks,
                                          const DepthMap& d_virtual,
                                          const DepthMap& d_real,
                                          int boundary_px = 7,
                                          double surface_band = 0.05);

// Mean over frames within each plane, then mean over planes; undefined
// entries are skipped. Throws if everything is undefined.
double aggregate_plane_ious(
    const std::vector<std::vector<std::optional<double>>>& per_plane_frames);

struct DepthMetrics {
  double abs_diff = 0.0;
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double log_rmse = 0.0;
  double delta_105 = 0.0;  // percent of pixels with max(d/g, g/d) < 1.05
  double delta_110 = 0.0;
  double delta_125 = 0.0;
};

// Over pixels valid in both maps; nullopt when there are none.
std::optional<DepthMetrics> depth_metrics(const DepthMap& pred,
                                          const DepthMap& gt);

// Flicker score: up to max_points surface points from the first frame are
// reprojected into each scored frame; per point, visibility [C > tau] flips
// are counted over successive valid observations and normalized by the
// number of transitions. Returns 1000 * mean flip rate (0 = stable).
std::optional<double> temporal_score(const std::vector<CompositingMask>& masks,
                                     const Sequence& seq, double tau,
                                     int warmup = 2, int max_points = 1024);

// Aggregated evaluation results; serialized as JSON and as an
// aligned-column text table (IoU All / Surface / Boundary, then the depth
// columns).
struct MetricReport {
  std::optional<double> iou_all;
  std::optional<double> iou_surface;
  std::optional<double> iou_boundary;
  std::optional<DepthMetrics> depth;
  std::optional<double> temporal;
};

nlohmann::json report_to_json(const MetricReport& report);
std::string report_table(const std::string& row_label,
                         const MetricReport& report);

}  // namespace impd
