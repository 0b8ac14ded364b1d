#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "aerofuse/densifier.hpp"
#include "aerofuse/geometry.hpp"
#include "aerofuse/raster.hpp"

namespace aerofuse {

/// Dense TSDF on a fixed lattice: voxel (i, j, k) sits at
/// (lattice_origin + (i, j, k)) * voxel_size. Growing the volume never
/// resamples stored voxels.
class TsdfVolume {
 public:
  using Index3 = std::array<std::int64_t, 3>;

  TsdfVolume(double voxel_size, double truncation, int max_weight = 64);

  /// Volume covering [lo, hi] (meters).
  static TsdfVolume covering(const Vec3& lo, const Vec3& hi, double voxel_size, double truncation,
                             int max_weight = 64);

  double voxel_size() const { return voxel_size_; }
  double truncation() const { return truncation_; }
  int max_weight() const { return max_weight_; }
  const Index3& lattice_origin() const { return origin_; }
  const Index3& extent() const { return extent_; }
  std::size_t voxel_count() const { return sdf_.size(); }
  bool empty() const { return sdf_.empty(); }

  Vec3 voxel_center(std::int64_t i, std::int64_t j, std::int64_t k) const;
  float sdf(std::int64_t i, std::int64_t j, std::int64_t k) const { return sdf_[linear(i, j, k)]; }
  float weight(std::int64_t i, std::int64_t j, std::int64_t k) const { return weight_[linear(i, j, k)]; }
  std::size_t weighted_voxels() const;

  /// Extends the volume (never shrinks) so it contains [lo, hi].
  void grow_to_contain(const Vec3& lo, const Vec3& hi);

  struct Update {
    float* sdf;
    float* weight;
  };
  Update at(std::int64_t i, std::int64_t j, std::int64_t k) {
    const std::size_t n = linear(i, j, k);
    return {&sdf_[n], &weight_[n]};
  }

 private:
  std::size_t linear(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>((k * extent_[1] + j) * extent_[0] + i);
  }

  double voxel_size_;
  double truncation_;
  int max_weight_;
  Index3 origin_{0, 0, 0};
  Index3 extent_{0, 0, 0};
  std::vector<float> sdf_;
  std::vector<float> weight_;
};

struct IntegrationStats {
  std::size_t updated_voxels = 0;
  std::size_t visited_voxels = 0;
};

/// World-space box of the valid surface of a depth map, padded by `margin`.
std::pair<Vec3, Vec3> depth_bounds(const DepthMap& depth, double margin);

/// Fuses one depth map with a camera-z signed distance and a running
/// weighted average. Throws OutOfVolume when no voxel of the frustum lies
/// inside the volume.
IntegrationStats integrate_depth(TsdfVolume& volume, const DepthMap& depth);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Rgb> colors;  ///< empty or one per point
};

/// One point per sign change of the sdf between weighted neighbours along
/// each axis, at the linear zero crossing. Throws EmptyVolume.
PointCloud extract_point_cloud(const TsdfVolume& volume);

/// Maximum-elevation raster. Row 0 is the southernmost row (minimum y);
/// `origin` is the lower-left corner of cell (0, 0).
struct HeightRaster {
  int rows = 0;
  int cols = 0;
  double cell_size = 0.0;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  std::vector<double> height;  ///< row-major, NaN = empty

  double at(int r, int c) const { return height[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return height[static_cast<std::size_t>(r) * cols + c]; }
  Eigen::Vector2d cell_center(int r, int c) const {
    return origin + cell_size * Eigen::Vector2d(c + 0.5, r + 0.5);
  }
  /// Cell containing (x, y), if inside the grid.
  std::optional<std::pair<int, int>> cell_of(double x, double y) const;
};

/// Grid over the XY bounding box of the points padded by half a cell.
HeightRaster rasterize_dsm(const std::vector<Vec3>& points, double cell_size);

struct OrthoSource {
  FrameId frame_id = 0;
  const RgbImage* image = nullptr;
  const DepthMap* depth = nullptr;  ///< pose and intrinsics of the frame
};

struct OrthoConfig {
  /// Relative tolerance of the visibility test against the frame's depth map.
  double occlusion_tolerance = 0.02;
};

/// True-orthomosaic on the DSM grid (same rows/cols). Each cell takes the
/// colour of the most nadir frame that sees its surface point; unobserved
/// cells stay black. Throws NoImagery when no source has an image.
RgbImage orthomosaic(const std::vector<OrthoSource>& sources, const HeightRaster& dsm,
                     const OrthoConfig& config = {});

/// Colours each point from the orthomosaic cell below it.
void colorize(PointCloud& cloud, const HeightRaster& dsm, const RgbImage& ortho);

}  // namespace aerofuse
