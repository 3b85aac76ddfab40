#pragma once

#include "impd/metrics.hpp"

namespace impd::reference {

// Deliberately naive re-implementations of the evaluation metrics, used to
// cross-check the fast paths. Regions are built by direct per-pixel scans
// (the boundary band by explicit Chebyshev distance search) instead of the
// incremental passes in metrics.cpp.

std::optional<IouBreakdown> occlusion_iou(const OcclusionMasks& masks,
                                          const DepthMap& d_virtual,
                                          const DepthMap& d_real,
                                          int boundary_px = 7,
                                          double surface_band = 0.05);

double aggregate_plane_ious(
    const std::vector<std::vector<std::optional<double>>>& per_plane_frames);

std::optional<DepthMetrics> depth_metrics(const DepthMap& pred,
                                          const DepthMap& gt);

}  // namespace impd::reference
