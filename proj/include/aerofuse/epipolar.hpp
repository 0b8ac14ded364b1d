#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aerofuse/geometry.hpp"

namespace aerofuse {

struct Correspondence {
  Vec2 a;  ///< pixel in image a
  Vec2 b;  ///< pixel in image b
};

struct RansacConfig {
  double threshold_px = 1.0;  ///< symmetric epipolar distance, pixels
  int max_iters = 1000;
  std::uint64_t seed = 42;
  double confidence = 0.999;      ///< adaptive early stop
  double min_inlier_ratio = 0.30;  ///< below this the pair has no consensus
};

/// Motion from camera a to camera b: X_b = rotation * X_a + t, |t| = 1.
struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation_direction = Vec3::UnitX();
};

struct EpipolarResult {
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
  Mat3 essential = Mat3::Zero();
  RelativePose pose;
};

/// Essential matrix from normalized coordinates (x_b^T E x_a = 0) by the
/// normalized 8-point method, projected onto the essential manifold.
/// Needs >= 8 pairs.
Mat3 essential_eight_point(std::span<const Vec3> normalized_a, std::span<const Vec3> normalized_b);

/// Normalized DLT homography (x_b ~ H x_a) over at least four pairs, scaled
/// to unit middle singular value.
Mat3 homography_four_point(std::span<const Vec3> normalized_a, std::span<const Vec3> normalized_b);

/// Pixel-space fundamental matrix of an essential matrix.
Mat3 fundamental_from_essential(const Mat3& E, const CameraIntrinsics& Ka, const CameraIntrinsics& Kb);

/// RMS of the two point-to-epipolar-line distances, pixels.
double symmetric_epipolar_distance(const Mat3& F, const Vec2& a, const Vec2& b);

/// Chirality-checked decomposition of E using the given normalized pairs.
RelativePose decompose_essential(const Mat3& E, std::span<const Vec3> normalized_a,
                                 std::span<const Vec3> normalized_b);

/// Relative motion by RANSAC over two hypothesis sources (eight-point
/// essential matrices and four-point homographies, the latter with their
/// planar decompositions), each refined by Levenberg-Marquardt on the
/// symmetric epipolar distance; the best MSAC score wins. Deterministic for a given seed. Throws TooFewCorrespondences (< 8) or
/// NoConsensus (best inlier ratio below min_inlier_ratio).
EpipolarResult ransac_epipolar_filter(std::span<const Correspondence> correspondences,
                                      const CameraIntrinsics& Ka, const CameraIntrinsics& Kb,
                                      const RansacConfig& config);

}  // namespace aerofuse
