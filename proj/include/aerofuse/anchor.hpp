#pragma once

#include <map>
#include <utility>

#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/geometry.hpp"

namespace aerofuse {

struct AnchorCell {
  double depth = 0.0;        ///< camera-frame z, meters
  double uncertainty = 0.0;  ///< meters
  TrackId track_id = 0;
};

/// Pixel key ordered row-major: (row, column).
using PixelKey = std::pair<int, int>;

/// Sparse metric depth of the representative frame.
struct AnchorMap {
  FrameId frame_id = 0;
  int width = 0;
  int height = 0;
  Pose pose;
  CameraIntrinsics intrinsics;
  std::map<PixelKey, AnchorCell> cells;

  bool empty() const { return cells.empty(); }
  std::size_t size() const { return cells.size(); }
};

/// Projects the tie-points visible in `representative` to the nearest pixel.
/// Collisions keep the smaller depth. Throws EmptyAnchor when nothing projects.
AnchorMap build_anchor_map(const BaSolution& solution, const Frame& representative);

/// Fraction of `tile` x `tile` pixel tiles (partial border tiles included)
/// holding at least one anchor.
double anchor_coverage(const AnchorMap& map, int tile);

/// Occupancy fraction of an nx x ny grid laid over the frame.
double anchor_grid_coverage(const AnchorMap& map, int nx, int ny);

struct DepthOutlierConfig {
  int neighbors = 8;
  double relative_tolerance = 0.05;
};

/// Removes anchors whose depth departs from the median of their nearest
/// neighbours (in pixels) by more than the relative tolerance. Returns the
/// number of removed cells.
int reject_depth_outliers(AnchorMap& map, const DepthOutlierConfig& config = {});

}  // namespace aerofuse
