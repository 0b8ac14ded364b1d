#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "aerofuse/raster.hpp"

namespace aerofuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using FrameId = std::int64_t;

namespace so3 {

Mat3 skew(const Vec3& w);
/// Rodrigues exponential map.
Mat3 exp(const Vec3& w);
/// Inverse of exp; returns the rotation vector with angle in [0, pi].
Vec3 log(const Mat3& R);
/// Inverse of the left Jacobian of SO(3) at w.
Mat3 left_jacobian_inverse(const Vec3& w);
/// Projects an approximately orthonormal matrix onto SO(3).
Mat3 normalize(const Mat3& R);

}  // namespace so3

/// Pinhole intrinsics. Lens distortion is not modelled; imagery is assumed rectified.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 2;
  int height = 2;

  /// Throws InvalidArgument when an invariant is broken.
  void validate() const;
  Mat3 matrix() const;
  /// Intrinsics of the same camera resampled by `s` (0.5 = half resolution).
  CameraIntrinsics scaled(double s) const;
  /// Normalized image coordinates of a pixel (K^-1 applied).
  Vec3 unproject(const Vec2& pixel) const;
};

/// World-to-camera rigid transform: X_cam = R * X_world + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  /// Builds the pose of a camera with the given world position and
  /// camera-to-world attitude.
  static Pose from_center(const Mat3& camera_to_world, const Vec3& center);

  Vec3 transform(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }
  Pose inverse() const;

  /// Left-multiplicative update T <- Exp(delta) * T with delta = (omega, upsilon):
  /// R <- Exp(omega) R, t <- Exp(omega) t + upsilon.
  Pose perturbed(const Eigen::Matrix<double, 6, 1>& delta) const;

  bool is_valid_rotation(double tol = 1e-9) const;
};

/// Position/attitude prior from GNSS/INS.
struct GnssPrior {
  Pose pose;
  double position_sigma = 0.05;  ///< meters, isotropic 1-sigma
};

struct Frame {
  FrameId frame_id = 0;
  double timestamp = 0.0;
  CameraIntrinsics intrinsics;
  std::optional<GnssPrior> gnss_prior;
  std::shared_ptr<const RgbImage> image;
};

/// Simple polygon on the ground plane, counter-clockwise.
struct GroundPolygon {
  std::vector<Eigen::Vector2d> vertices;

  double area() const;
};

/// Projection of a world point into pixel coordinates. Throws NonPositiveDepth
/// when the point is not strictly in front of the camera.
Vec2 project(const CameraIntrinsics& K, const Pose& pose, const Vec3& point);

/// Inverse of project at a known camera-frame depth z.
Vec3 back_project(const CameraIntrinsics& K, const Pose& pose, const Vec2& pixel, double depth);

/// Reprojection residual with analytic Jacobians.
///
/// The pose Jacobian is taken with respect to the 6-vector (omega, upsilon) of
/// Pose::perturbed, evaluated at zero.
struct ReprojectionResidual {
  Vec2 residual;
  Eigen::Matrix<double, 2, 6> d_pose;
  Eigen::Matrix<double, 2, 3> d_point;
  double depth = 0.0;
};

ReprojectionResidual reprojection_residual(const Vec2& observation, const CameraIntrinsics& K,
                                           const Pose& pose, const Vec3& point);

struct PixelObservation {
  FrameId frame_id = 0;
  Vec2 pixel;
};

/// Linear (DLT) triangulation over all observations.
Vec3 triangulate(std::span<const PixelObservation> observations,
                 const std::map<FrameId, Pose>& poses,
                 const std::map<FrameId, CameraIntrinsics>& intrinsics);

/// Ground footprint of a frame from its GNSS pose on the plane z = ground_elevation.
GroundPolygon footprint(const Frame& frame, double ground_elevation);
/// Same, for an explicit pose.
GroundPolygon footprint(const CameraIntrinsics& K, const Pose& pose, double ground_elevation);

/// area(a ∩ b) / area(a). Exact for convex polygons.
double overlap_ratio(const GroundPolygon& a, const GroundPolygon& b);

}  // namespace aerofuse
