#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/densifier.hpp"
#include "aerofuse/fusion.hpp"
#include "aerofuse/schur.hpp"
#include "aerofuse/geometry.hpp"
#include "aerofuse/rng.hpp"

namespace aerofuse::test {

/// Camera-to-world attitude of a nadir camera flying along +x.
inline Mat3 nadir() { return Vec3(1.0, -1.0, -1.0).asDiagonal(); }

inline Pose nadir_pose(const Vec3& center) { return Pose::from_center(nadir(), center); }

inline CameraIntrinsics test_camera() { return {750.0, 750.0, 600.0, 400.0, 1200, 800}; }

inline double rotation_angle(const Mat3& a, const Mat3& b) { return so3::log(a * b.transpose()).norm(); }

inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

inline Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

/// Similarity (s, R, t) with dst ~ s R src + t, least squares.
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * rotation * x + translation; }
};

inline Similarity align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Eigen::Matrix3Xd a(3, src.size());
  Eigen::Matrix3Xd b(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = src[i];
    b.col(static_cast<Eigen::Index>(i)) = dst[i];
  }
  const Eigen::Matrix4d T = Eigen::umeyama(a, b, true);
  Similarity s;
  s.scale = T.block<3, 3>(0, 0).col(0).norm();
  s.rotation = T.block<3, 3>(0, 0) / s.scale;
  s.translation = T.block<3, 1>(0, 3);
  return s;
}

/// Exact camera-z depth of the plane n . X = offset seen through every pixel.
inline DepthMap plane_depth(const CameraIntrinsics& K, const Pose& pose, const Vec3& normal, double offset,
                            FrameId id = 0) {
  DepthMap d;
  d.frame_id = id;
  d.width = K.width;
  d.height = K.height;
  d.pose = pose;
  d.intrinsics = K;
  d.producer = "analytic";
  d.depth.assign(static_cast<std::size_t>(K.width) * K.height, 0.0);
  d.valid.assign(d.depth.size(), 0);
  const Vec3 C = pose.center();
  const Mat3 R_cw = pose.rotation.transpose();
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const Vec3 ray = R_cw * K.unproject(Vec2(u, v));
      const double s = (offset - normal.dot(C)) / normal.dot(ray);
      if (!(s > 0.0)) continue;
      const std::size_t i = static_cast<std::size_t>(v) * K.width + u;
      d.depth[i] = s;
      d.valid[i] = 1;
    }
  }
  return d;
}

/// Random damped normal equations of 3 cameras and `points` points, in block
/// and dense form.

struct DenseSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
};

inline BlockSystem random_system(Rng& rng, int points, DenseSystem& dense) {
  const Eigen::Index cd = 18;
  BlockSystem sys = BlockSystem::zeros(cd, static_cast<std::size_t>(points));
  const Eigen::Index n = cd + 3 * points;
  dense.H = Eigen::MatrixXd::Zero(n, n);
  dense.g = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < points; ++j) {
    for (int c = 0; c < 3; ++c) {
      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, n);
      for (int r = 0; r < 2; ++r) {
        for (int k = 0; k < 6; ++k) J(r, 6 * c + k) = rng.normal();
        for (int k = 0; k < 3; ++k) J(r, cd + 3 * j + k) = rng.normal();
      }
      dense.H += J.transpose() * J;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) dense.g[i] = rng.normal();
  sys.camera_camera = dense.H.topLeftCorner(cd, cd);
  sys.camera_gradient = dense.g.head(cd);
  for (int j = 0; j < points; ++j) {
    sys.camera_point[j] = dense.H.block(0, cd + 3 * j, cd, 3);
    sys.point_point[j] = dense.H.block<3, 3>(cd + 3 * j, cd + 3 * j);
    sys.point_gradient[j] = dense.g.segment<3>(cd + 3 * j);
  }
  return sys;
}

inline Eigen::VectorXd stack(const SchurStep& s) {
  Eigen::VectorXd x(s.camera.size() + 3 * static_cast<Eigen::Index>(s.points.size()));
  x.head(s.camera.size()) = s.camera;
  for (std::size_t j = 0; j < s.points.size(); ++j) x.segment<3>(s.camera.size() + 3 * static_cast<Eigen::Index>(j)) = s.points[j];
  return x;
}

struct WindowScene {
  CameraIntrinsics K = test_camera();
  std::vector<Pose> truth;
  std::map<TrackId, Vec3> points;
  std::vector<BaObservation> observations;
};

inline WindowScene window_scene(int n_points, double noise_px, std::uint64_t seed) {
  WindowScene s;
  for (int i = 0; i < 3; ++i) s.truth.push_back(nadir_pose(Vec3(16.0 * i, 0.5 * i, 50.0 + 0.2 * i)));
  Rng rng(seed);
  for (TrackId id = 0; id < n_points; ++id) {
    const Vec3 P(rng.uniform(-5, 37), rng.uniform(-20, 20), rng.uniform(-3, 3));
    s.points[id] = P;
    for (int f = 0; f < 3; ++f) {
      const Vec2 px = project(s.K, s.truth[f], P) + Vec2(rng.normal(0, noise_px), rng.normal(0, noise_px));
      s.observations.push_back({id, f, px});
    }
  }
  return s;
}

inline BaProblem make_problem(const WindowScene& s, const std::vector<Pose>& initial, const std::map<TrackId, Vec3>& pts) {
  BaProblem p;
  for (int f = 0; f < 3; ++f) p.frames.push_back({f, s.K, initial[f], std::nullopt});
  p.fixed_frame_ids = {0};
  p.baseline = BaselineConstraint{0, 1};
  p.points = pts;
  p.observations = s.observations;
  return p;
}

inline std::vector<Pose> perturb(const std::vector<Pose>& truth, Rng& rng) {
  std::vector<Pose> out = truth;
  const double baseline = (truth[1].center() - truth[0].center()).norm();
  for (std::size_t f = 1; f < out.size(); ++f) {
    const Mat3 R_cw = so3::exp(random_unit(rng) * (M_PI / 180.0)) * truth[f].rotation.transpose();
    const Vec3 C = truth[f].center() + random_unit(rng) * 0.02 * baseline;
    out[f] = Pose::from_center(R_cw, C);
  }
  return out;
}


// Window-enumeration oracle. Sums use Neumaier compensation so the result is
// comparable bit for bit with the production kernel.
struct Neumaier {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

inline double oracle_local_std(const HeightRaster& r, int k) {
  const int h = k / 2;
  Neumaier total;
  std::size_t n = 0;
  for (int row = 0; row < r.rows; ++row) {
    for (int col = 0; col < r.cols; ++col) {
      if (std::isnan(r.at(row, col))) continue;
      std::vector<double> w;
      for (int dr = -h; dr <= h; ++dr)
        for (int dc = -h; dc <= h; ++dc) {
          const int rr = row + dr, cc = col + dc;
          if (rr < 0 || cc < 0 || rr >= r.rows || cc >= r.cols) continue;
          if (!std::isnan(r.at(rr, cc))) w.push_back(r.at(rr, cc));
        }
      if (w.size() < 2) continue;
      Neumaier s;
      for (double x : w) s.add(x);
      const double mean = s.value() / static_cast<double>(w.size());
      Neumaier q;
      for (double x : w) q.add((x - mean) * (x - mean));
      total.add(std::sqrt(q.value() / static_cast<double>(w.size())));
      ++n;
    }
  }
  return n ? total.value() / static_cast<double>(n) : 0.0;
}

}  // namespace aerofuse::test
