#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <utility>
#include <vector>

#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/densifier.hpp"
#include "aerofuse/geometry.hpp"
#include "aerofuse/raster.hpp"

namespace aerofuse::sim {

struct Bump {
  double x = 0.0;
  double y = 0.0;
  double amplitude = 0.0;  ///< meters, signed
  double sigma = 1.0;      ///< meters
};

/// Smooth heightfield: base + sum of Gaussian bumps.
struct Terrain {
  double base = 0.0;
  std::vector<Bump> bumps;

  double height(double x, double y) const;
  Eigen::Vector2d gradient(double x, double y) const;
  /// Lower and upper bounds of the height anywhere.
  std::pair<double, double> range() const;
  /// Upper bound of |grad| anywhere.
  double max_slope() const;
};

struct SceneConfig {
  double x_min = -60.0;
  double x_max = 420.0;
  double y_min = -45.0;
  double y_max = 45.0;
  int bumps = 12;
  double relief = 4.0;          ///< largest bump amplitude, meters
  double max_slope_deg = 25.0;  ///< enforced bound on the terrain slope
  int features = 20000;
  /// Free-standing targets: XY triangle side and absolute elevations.
  double marker_side = 40.0;
  Eigen::Vector2d marker_centroid{160.0, 0.0};
  std::vector<double> marker_elevations{-30.0, -17.0, 9.0};
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  Terrain terrain;
  std::vector<Vec3> markers;
  std::vector<Vec3> feature_points;  ///< on the terrain
};

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& config = {});

struct MissionPlan {
  double altitude = 50.0;  ///< above the ground plane
  double ground_elevation = 0.0;
  double forward_overlap = 0.8;
  double side_overlap = 0.3;
  int strips = 1;
  int frames_per_strip = 22;
  double speed = 5.0;  ///< m/s, sets timestamps
  Eigen::Vector2d start{0.0, 0.0};
  CameraIntrinsics intrinsics{750.0, 750.0, 600.0, 400.0, 1200, 800};
  double gnss_sigma = 0.05;         ///< meters per axis
  double attitude_noise = 0.001;    ///< radians per axis
  double dropout = 0.0;             ///< probability a frame has no prior

  void validate() const;
};

struct Mission {
  std::vector<Frame> frames;
  std::vector<Pose> truth;  ///< exact poses, same order
};

/// Nadir strips flying along +x (image u). Frame spacing realizes the
/// forward overlap exactly on the ground plane.
Mission generate_mission(const SyntheticScene& scene, const MissionPlan& plan, std::uint64_t seed);

struct TrackSet {
  std::vector<Track> tracks;
  std::map<TrackId, Vec3> truth;
  std::set<std::pair<TrackId, FrameId>> outliers;  ///< labeled corrupt observations
  std::vector<TrackId> marker_tracks;              ///< track id of each marker
};

struct TrackConfig {
  int features = 20000;  ///< uses the first n scene features
  double pixel_noise = 0.5;
  double outlier_fraction = 0.0;
  bool include_markers = true;
};

/// Forward-projects features (and markers, ids after the features) into
/// every frame where they are in front of the camera and inside the image.
TrackSet render_tracks(const SyntheticScene& scene, const Mission& mission, const TrackConfig& config,
                       std::uint64_t seed);

/// Exact per-pixel camera-z depth of the terrain, bisection to 1e-6 m.
DepthMap true_depth(const SyntheticScene& scene, const CameraIntrinsics& K, const Pose& pose, FrameId frame_id = 0);

/// Procedural ground colour at (x, y).
Rgb ground_color(double x, double y);

/// Renders the terrain texture as seen by the camera.
RgbImage render_image(const SyntheticScene& scene, const CameraIntrinsics& K, const Pose& pose);

/// Writes frames.csv, tracks.txt, markers.csv, truth_poses.csv and, when
/// `images` is set, images/frame_<id>.ppm.
void write_dataset(const std::filesystem::path& dir, const SyntheticScene& scene, const Mission& mission,
                   const TrackSet& tracks, bool images);

}  // namespace aerofuse::sim
