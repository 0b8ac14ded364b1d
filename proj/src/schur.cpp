#include "aerofuse/schur.hpp"

#include <Eigen/Cholesky>

#include "aerofuse/error.hpp"

namespace aerofuse {

BlockSystem BlockSystem::zeros(Eigen::Index camera_dim, std::size_t points) {
  BlockSystem s;
  s.camera_camera = Eigen::MatrixXd::Zero(camera_dim, camera_dim);
  s.camera_point.assign(points, PointCoupling::Zero(camera_dim, 3));
  s.point_point.assign(points, Eigen::Matrix3d::Zero());
  s.camera_gradient = Eigen::VectorXd::Zero(camera_dim);
  s.point_gradient.assign(points, Eigen::Vector3d::Zero());
  return s;
}

namespace {

Eigen::LLT<Eigen::Matrix3d> damped_point_block(const Eigen::Matrix3d& block, double lambda) {
  Eigen::LLT<Eigen::Matrix3d> llt(block + lambda * Eigen::Matrix3d::Identity());
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularSystem, "point block is not positive definite");
  return llt;
}

}  // namespace

Eigen::MatrixXd reduced_camera_matrix(const BlockSystem& system, double lambda) {
  const Eigen::Index dc = system.camera_dim();
  Eigen::MatrixXd S = system.camera_camera;
  S.diagonal().array() += lambda;
  for (std::size_t j = 0; j < system.point_count(); ++j) {
    if (dc == 0) break;
    const auto llt = damped_point_block(system.point_point[j], lambda);
    const PointCoupling& W = system.camera_point[j];
    const PointCoupling VinvWt = llt.solve(W.transpose()).transpose();
    S.noalias() -= VinvWt * W.transpose();
  }
  return S;
}

SchurStep schur_solve(const BlockSystem& system, double lambda) {
  if (lambda < 0.0) throw Error(ErrorCode::InvalidArgument, "damping must be non-negative");
  const Eigen::Index dc = system.camera_dim();
  const std::size_t np = system.point_count();

  std::vector<Eigen::LLT<Eigen::Matrix3d>> point_solvers;
  point_solvers.reserve(np);
  Eigen::MatrixXd S = system.camera_camera;
  S.diagonal().array() += lambda;
  Eigen::VectorXd rhs = -system.camera_gradient;
  for (std::size_t j = 0; j < np; ++j) {
    point_solvers.push_back(damped_point_block(system.point_point[j], lambda));
    if (dc == 0) continue;
    const PointCoupling& W = system.camera_point[j];
    // W V^-1, with V symmetric.
    const PointCoupling WVinv = point_solvers.back().solve(W.transpose()).transpose();
    S.noalias() -= WVinv * W.transpose();
    rhs.noalias() += WVinv * system.point_gradient[j];
  }

  SchurStep step;
  step.camera = Eigen::VectorXd::Zero(dc);
  if (dc > 0) {
    S = 0.5 * (S + S.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::SingularSystem, "reduced camera system is not positive definite");
    step.camera = llt.solve(rhs);
    if (!step.camera.allFinite())
      throw Error(ErrorCode::SingularSystem, "reduced camera system produced a non-finite step");
  }

  step.points.resize(np);
  for (std::size_t j = 0; j < np; ++j) {
    Eigen::Vector3d r = -system.point_gradient[j];
    if (dc > 0) r.noalias() -= system.camera_point[j].transpose() * step.camera;
    step.points[j] = point_solvers[j].solve(r);
  }
  return step;
}

}  // namespace aerofuse
