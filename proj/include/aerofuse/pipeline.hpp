#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aerofuse/anchor.hpp"
#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/clustering.hpp"
#include "aerofuse/densifier.hpp"
#include "aerofuse/fusion.hpp"
#include "aerofuse/metrics.hpp"

namespace aerofuse {

struct PipelineConfig {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  bool load_images = true;

  ClusterPolicy clustering;
  BaConfig ba;
  /// Overrides the per-frame GNSS sigma when positive.
  double gnss_prior_sigma = 0.0;
  DepthOutlierConfig anchor_filter;
  DensifierConfig densifier;

  double voxel_size = 0.25;
  double truncation = 0.0;  ///< <= 0: 3 x voxel_size
  int max_weight = 64;
  bool auto_grow = true;
  double dsm_cell_size = 0.5;
  OrthoConfig ortho;
  int window_k = 3;

  int workers = 1;
  double time_budget_per_image = 2.0;  ///< seconds

  /// Throws ConfigError.
  void validate() const;
  double effective_truncation() const { return truncation > 0.0 ? truncation : 3.0 * voxel_size; }
};

/// Sorted key=value pairs covering every configuration value.
std::vector<std::pair<std::string, std::string>> canonical_entries(const PipelineConfig& config);
/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);

struct StageTimings {
  double ba_ms = 0.0;
  double anchor_ms = 0.0;
  double densify_ms = 0.0;
  double fusion_ms = 0.0;
  double total_ms() const { return ba_ms + anchor_ms + densify_ms + fusion_ms; }
};

struct ClusterRecord {
  int cluster_id = 0;
  std::vector<FrameId> frame_ids;
  int representative_index = 0;
  std::array<FrameId, 3> ba_window{};
  ClusterMode mode = ClusterMode::FixedTriple;
  bool overlap_warning = false;

  bool ok = false;
  std::string failure;  ///< error text of a failed cluster
  int ba_iterations = 0;
  double ba_initial_cost = 0.0;
  double ba_final_cost = 0.0;
  int ba_inliers = 0;
  double ba_rms_px = 0.0;
  int epipolar_rejected = 0;
  std::size_t anchor_count = 0;
  int anchors_rejected = 0;
  std::string densifier;
  bool densifier_fallback = false;
  std::string densifier_failure;
  bool gauge_restart = false;
  bool fused = false;
  StageTimings timings;

  double per_image_ms() const { return timings.total_ms() / static_cast<double>(frame_ids.size()); }
};

struct RunManifest {
  std::string config_hash;
  std::vector<ClusterRecord> clusters;
  std::map<std::string, std::filesystem::path> artifacts;
  std::vector<std::string> warnings;
  std::optional<std::string> error;
  double total_ms = 0.0;

  std::string to_json() const;
};

/// Measured position of a ground marker, averaged over the windows that
/// reconstructed its track.
struct MarkerMeasurement {
  std::string marker_id;
  TrackId track_id = 0;
  Vec3 measured = Vec3::Zero();
  std::optional<Vec3> truth;
  int windows = 0;
};

struct RunResult {
  RunManifest manifest;
  std::vector<MarkerMeasurement> markers;
  std::optional<MarkerErrors> marker_errors;
  std::optional<QualityReport> report;
  std::map<FrameId, Pose> poses;
  std::vector<BaSolution> solutions;       ///< successful windows in cluster order
  std::vector<AnchorMap> anchors;          ///< anchor maps that reached the densifier
};

/// Runs clustering, bundle adjustment, anchoring, densification, fusion and
/// evaluation over the input directory and writes the products to the
/// output directory. Per-cluster failures are recorded and skipped.
/// Throws ConfigError or InputFormatError after writing the manifest.
RunResult run(const PipelineConfig& config);

namespace io {

/// "x y z" or "x y z r g b" per line, six decimals.
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
/// Dense raster plus a sidecar `<path>.hdr` with origin_x, origin_y,
/// cell_size and nodata lines. Row 0 is the southern edge.
void write_dsm(const std::filesystem::path& path, const HeightRaster& dsm);
HeightRaster read_dsm(const std::filesystem::path& path);

/// marker_id,track_id,x,y,z,truth_x,truth_y,truth_z (truth columns may be empty).
void write_marker_positions(const std::filesystem::path& path, const std::vector<MarkerMeasurement>& markers);
std::vector<MarkerMeasurement> read_marker_positions(const std::filesystem::path& path);
/// One line per marker pair plus the mean row.
void write_marker_errors(const std::filesystem::path& path, const MarkerErrors& errors);

}  // namespace io

/// All pairs of markers that carry a truth position.
std::vector<MarkerPair> marker_pairs(const std::vector<MarkerMeasurement>& markers);

}  // namespace aerofuse
