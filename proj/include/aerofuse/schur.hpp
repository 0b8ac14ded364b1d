#pragma once

#include <Eigen/Core>

#include <vector>

namespace aerofuse {

using PointCoupling = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Block-structured normal equations of a bundle adjustment problem:
///
///   [ Hcc   Hcp ] [dc]     [gc]
///   [ Hcp^T Hpp ] [dp] = - [gp]
///
/// Hpp is block diagonal with one 3x3 block per point; Hcp is stored as one
/// (camera_dim x 3) column block per point.
struct BlockSystem {
  Eigen::MatrixXd camera_camera;
  std::vector<PointCoupling> camera_point;
  std::vector<Eigen::Matrix3d> point_point;
  Eigen::VectorXd camera_gradient;
  std::vector<Eigen::Vector3d> point_gradient;

  /// Zero system for `camera_dim` camera parameters and `points` points.
  static BlockSystem zeros(Eigen::Index camera_dim, std::size_t points);
  Eigen::Index camera_dim() const { return camera_camera.rows(); }
  std::size_t point_count() const { return point_point.size(); }
};

struct SchurStep {
  Eigen::VectorXd camera;
  std::vector<Eigen::Vector3d> points;
};

/// Solves (H + lambda I) x = -g by eliminating the point blocks first.
/// Throws SingularSystem when a point block or the reduced camera system is
/// not positive definite.
SchurStep schur_solve(const BlockSystem& system, double lambda);

/// Reduced camera matrix Hcc + lambda I - sum_j Hcp_j (Hpp_j + lambda I)^-1 Hcp_j^T.
Eigen::MatrixXd reduced_camera_matrix(const BlockSystem& system, double lambda);

}  // namespace aerofuse
