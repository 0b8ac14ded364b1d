#include "aerofuse/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "aerofuse/dataset.hpp"
#include "aerofuse/error.hpp"
#include "aerofuse/io.hpp"
#include "aerofuse/rng.hpp"

namespace aerofuse::sim {

namespace {

// Maximum of |d/dr a exp(-r^2 / 2s^2)| is |a| / s * exp(-1/2).
constexpr double kBumpSlope = 0.60653065971263342;

Mat3 nadir_attitude() { return Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal(); }

}  // namespace

double Terrain::height(double x, double y) const {
  double z = base;
  for (const auto& b : bumps) {
    const double dx = x - b.x, dy = y - b.y;
    z += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  return z;
}

Eigen::Vector2d Terrain::gradient(double x, double y) const {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (const auto& b : bumps) {
    const double dx = x - b.x, dy = y - b.y;
    const double s2 = b.sigma * b.sigma;
    const double e = b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
    g += Eigen::Vector2d(-dx / s2 * e, -dy / s2 * e);
  }
  return g;
}

std::pair<double, double> Terrain::range() const {
  double lo = base, hi = base;
  for (const auto& b : bumps) (b.amplitude < 0.0 ? lo : hi) += b.amplitude;
  return {lo, hi};
}

double Terrain::max_slope() const {
  double s = 0.0;
  for (const auto& b : bumps) s += kBumpSlope * std::abs(b.amplitude) / b.sigma;
  return s;
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  if (!(config.x_max > config.x_min) || !(config.y_max > config.y_min) || config.bumps < 0 || config.bumps > 16 ||
      config.features < 0 || !(config.max_slope_deg > 0.0 && config.max_slope_deg < 30.0))
    throw Error(ErrorCode::InvalidArgument, "invalid scene configuration");
  Rng rng(seed);
  SyntheticScene scene;
  scene.seed = seed;
  for (int i = 0; i < config.bumps; ++i) {
    Bump b;
    b.x = rng.uniform(config.x_min, config.x_max);
    b.y = rng.uniform(config.y_min, config.y_max);
    b.sigma = rng.uniform(12.0, 35.0);
    b.amplitude = rng.uniform(-config.relief, config.relief);
    scene.terrain.bumps.push_back(b);
  }
  const double limit = std::tan(config.max_slope_deg * std::numbers::pi / 180.0);
  const double slope = scene.terrain.max_slope();
  if (slope > limit)
    for (auto& b : scene.terrain.bumps) b.amplitude *= limit / slope;

  scene.feature_points.reserve(static_cast<std::size_t>(config.features));
  for (int i = 0; i < config.features; ++i) {
    const double x = rng.uniform(config.x_min, config.x_max);
    const double y = rng.uniform(config.y_min, config.y_max);
    scene.feature_points.emplace_back(x, y, scene.terrain.height(x, y));
  }

  const double s = config.marker_side;
  const double h = s * std::sqrt(3.0) / 2.0;
  // Apex along the flight direction keeps every vertex within s/2 of the track.
  const Eigen::Vector2d corners[3] = {{-h / 3.0, -s / 2.0}, {-h / 3.0, s / 2.0}, {2.0 * h / 3.0, 0.0}};
  for (std::size_t i = 0; i < 3 && !config.marker_elevations.empty(); ++i) {
    const Eigen::Vector2d xy = config.marker_centroid + corners[i];
    scene.markers.emplace_back(xy.x(), xy.y(), config.marker_elevations[i % config.marker_elevations.size()]);
  }
  return scene;
}

void MissionPlan::validate() const {
  intrinsics.validate();
  if (!(altitude > 0.0)) throw Error(ErrorCode::InvalidArgument, "altitude must be positive");
  if (!(forward_overlap > 0.0 && forward_overlap < 1.0) || !(side_overlap > 0.0 && side_overlap < 1.0))
    throw Error(ErrorCode::InvalidArgument, "overlaps must lie in (0, 1)");
  if (strips < 1 || frames_per_strip < 1) throw Error(ErrorCode::InvalidArgument, "mission needs frames");
  if (!(speed > 0.0)) throw Error(ErrorCode::InvalidArgument, "speed must be positive");
  if (!(gnss_sigma >= 0.0) || !(attitude_noise >= 0.0) || !(dropout >= 0.0 && dropout <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "invalid GNSS noise settings");
}

Mission generate_mission(const SyntheticScene& scene, const MissionPlan& plan, std::uint64_t seed) {
  plan.validate();
  if (!(plan.ground_elevation + plan.altitude > scene.terrain.range().second))
    throw Error(ErrorCode::InvalidArgument, "flight altitude is below the terrain");
  const auto& K = plan.intrinsics;
  const double along = K.width * plan.altitude / K.fx;
  const double across = K.height * plan.altitude / K.fy;
  const double step = (1.0 - plan.forward_overlap) * along;
  const double strip_step = (1.0 - plan.side_overlap) * across;
  const Mat3 R_cw = nadir_attitude();

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Mission m;
  FrameId id = 0;
  double time = 0.0;
  for (int s = 0; s < plan.strips; ++s) {
    for (int i = 0; i < plan.frames_per_strip; ++i) {
      const Vec3 C(plan.start.x() + i * step, plan.start.y() - s * strip_step, plan.ground_elevation + plan.altitude);
      Frame f;
      f.frame_id = id++;
      f.timestamp = time;
      f.intrinsics = K;
      const Pose truth = Pose::from_center(R_cw, C);
      const bool drop = rng.bernoulli(plan.dropout);
      const Vec3 dc(rng.normal(0.0, plan.gnss_sigma), rng.normal(0.0, plan.gnss_sigma), rng.normal(0.0, plan.gnss_sigma));
      const Vec3 dw(rng.normal(0.0, plan.attitude_noise), rng.normal(0.0, plan.attitude_noise),
                    rng.normal(0.0, plan.attitude_noise));
      if (!drop)
        f.gnss_prior = GnssPrior{Pose::from_center(so3::exp(dw) * R_cw, C + dc), std::max(plan.gnss_sigma, 1e-3)};
      m.frames.push_back(std::move(f));
      m.truth.push_back(truth);
      time += step / plan.speed;
    }
    time += across / plan.speed;
  }
  return m;
}

TrackSet render_tracks(const SyntheticScene& scene, const Mission& mission, const TrackConfig& config,
                       std::uint64_t seed) {
  if (config.features < 8) throw Error(ErrorCode::InvalidArgument, "at least 8 features are required");
  if (static_cast<std::size_t>(config.features) > scene.feature_points.size())
    throw Error(ErrorCode::InvalidArgument, "scene holds fewer features than requested");
  if (!(config.pixel_noise >= 0.0) || !(config.outlier_fraction >= 0.0 && config.outlier_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "invalid noise settings");

  Rng rng(seed);
  TrackSet out;
  auto render = [&](TrackId id, const Vec3& P, bool allow_outliers) {
    Track t;
    t.track_id = id;
    std::vector<FrameId> corrupt;
    for (std::size_t i = 0; i < mission.frames.size(); ++i) {
      const Frame& f = mission.frames[i];
      const auto& K = f.intrinsics;
      const Vec3 X = mission.truth[i].transform(P);
      if (!(X.z() > 0.0)) continue;
      Vec2 px(K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy);
      if (!(px.x() >= 0.0 && px.x() < K.width && px.y() >= 0.0 && px.y() < K.height)) continue;
      px += Vec2(rng.normal(0.0, config.pixel_noise), rng.normal(0.0, config.pixel_noise));
      const bool outlier = allow_outliers && rng.bernoulli(config.outlier_fraction);
      const Vec2 wild(rng.uniform(0.0, K.width), rng.uniform(0.0, K.height));
      if (outlier) px = wild;
      if (!(px.x() >= 0.0 && px.x() < K.width && px.y() >= 0.0 && px.y() < K.height)) continue;
      if (outlier) corrupt.push_back(f.frame_id);
      t.observations.push_back({f.frame_id, px});
    }
    if (t.observations.size() < 2) return;
    for (FrameId fid : corrupt) out.outliers.insert({id, fid});
    out.truth[id] = P;
    out.tracks.push_back(std::move(t));
  };
  for (int j = 0; j < config.features; ++j) render(j, scene.feature_points[static_cast<std::size_t>(j)], true);
  if (config.include_markers) {
    for (std::size_t i = 0; i < scene.markers.size(); ++i) {
      const TrackId id = config.features + static_cast<TrackId>(i);
      out.marker_tracks.push_back(id);
      render(id, scene.markers[i], false);
    }
  }
  return out;
}

DepthMap true_depth(const SyntheticScene& scene, const CameraIntrinsics& K, const Pose& pose, FrameId frame_id) {
  K.validate();
  const Vec3 C = pose.center();
  const auto [zmin, zmax] = scene.terrain.range();
  if (!(C.z() > zmax)) throw Error(ErrorCode::InvalidArgument, "camera is not above the terrain");
  DepthMap d;
  d.frame_id = frame_id;
  d.width = K.width;
  d.height = K.height;
  d.pose = pose;
  d.intrinsics = K;
  d.producer = "truth";
  d.depth.assign(static_cast<std::size_t>(K.width) * K.height, std::numeric_limits<double>::quiet_NaN());
  d.valid.assign(d.depth.size(), 0);
  const Mat3 Rt = pose.rotation.transpose();
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      // Ray parameter s is the camera-frame depth since the unprojected z is 1.
      const Vec3 dir = Rt * K.unproject(Vec2(u, v));
      if (!(dir.z() < 0.0)) continue;
      auto f = [&](double s) {
        const Vec3 p = C + s * dir;
        return p.z() - scene.terrain.height(p.x(), p.y());
      };
      double lo = (C.z() - zmax) / -dir.z();
      double hi = (C.z() - zmin) / -dir.z() + 1e-9;
      if (f(lo) < 0.0 || f(hi) > 0.0) continue;
      while (hi - lo > 1e-7) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
      }
      const std::size_t i = static_cast<std::size_t>(v) * K.width + u;
      d.depth[i] = 0.5 * (lo + hi);
      d.valid[i] = 1;
    }
  }
  return d;
}

Rgb ground_color(double x, double y) {
  // Hashed 0.5 m cells over a slowly varying base tint.
  const auto cx = static_cast<std::int64_t>(std::floor(x * 2.0));
  const auto cy = static_cast<std::int64_t>(std::floor(y * 2.0));
  std::uint64_t h = static_cast<std::uint64_t>(cx) * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(cy) * 0xc2b2ae3d27d4eb4fULL;
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 29;
  const auto band = static_cast<std::int64_t>(std::floor(x / 10.0)) + static_cast<std::int64_t>(std::floor(y / 10.0));
  const int base = (band % 2 == 0) ? 150 : 90;
  return {static_cast<std::uint8_t>(base + (h & 0x3f)), static_cast<std::uint8_t>(base + ((h >> 8) & 0x3f)),
          static_cast<std::uint8_t>(60 + ((h >> 16) & 0x7f))};
}

RgbImage render_image(const SyntheticScene& scene, const CameraIntrinsics& K, const Pose& pose) {
  K.validate();
  RgbImage img(K.width, K.height);
  const Vec3 C = pose.center();
  const Mat3 Rt = pose.rotation.transpose();
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const Vec3 dir = Rt * K.unproject(Vec2(u, v));
      if (!(dir.z() < 0.0)) continue;
      // Fixed-point iteration on the ray parameter; the slope bound keeps it contracting.
      double s = (C.z() - scene.terrain.base) / -dir.z();
      for (int it = 0; it < 12; ++it) {
        const Vec3 p = C + s * dir;
        s = (C.z() - scene.terrain.height(p.x(), p.y())) / -dir.z();
      }
      const Vec3 p = C + s * dir;
      img.set(u, v, ground_color(p.x(), p.y()));
    }
  }
  return img;
}

void write_dataset(const std::filesystem::path& dir, const SyntheticScene& scene, const Mission& mission,
                   const TrackSet& tracks, bool images) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  io::write_frames_csv(dir / "frames.csv", mission.frames);
  io::write_tracks(dir / "tracks.txt", tracks.tracks);
  std::vector<MarkerSpec> markers;
  for (std::size_t i = 0; i < tracks.marker_tracks.size() && i < scene.markers.size(); ++i) {
    const bool tracked = tracks.truth.count(tracks.marker_tracks[i]) > 0;
    if (tracked) markers.push_back({"M" + std::to_string(i + 1), tracks.marker_tracks[i], scene.markers[i]});
  }
  io::write_markers(dir / "markers.csv", markers);

  std::ostringstream os;
  os << "frame_id,x,y,z,qw,qx,qy,qz\n";
  os.precision(17);
  for (std::size_t i = 0; i < mission.frames.size(); ++i) {
    const Vec3 c = mission.truth[i].center();
    Eigen::Quaterniond q(mission.truth[i].rotation.transpose());
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    os << mission.frames[i].frame_id << ',' << c.x() << ',' << c.y() << ',' << c.z() << ',' << q.w() << ','
       << q.x() << ',' << q.y() << ',' << q.z() << '\n';
  }
  std::ofstream(dir / "truth_poses.csv") << os.str();

  if (images) {
    fs::create_directories(dir / "images");
    for (std::size_t i = 0; i < mission.frames.size(); ++i) {
      const Frame& f = mission.frames[i];
      io::write_ppm(dir / "images" / ("frame_" + std::to_string(f.frame_id) + ".ppm"),
                    render_image(scene, f.intrinsics, mission.truth[i]));
    }
  }
}

}  // namespace aerofuse::sim
