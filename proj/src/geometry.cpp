#include "aerofuse/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <set>

#include "aerofuse/error.hpp"

namespace aerofuse {

namespace so3 {

Mat3 skew(const Vec3& w) {
  Mat3 S;
  S << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return S;
}

Mat3 exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = skew(w);
  if (theta2 < 1e-20) return Mat3::Identity() + W + 0.5 * W * W;
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * W +
         ((1.0 - std::cos(theta)) / theta2) * W * W;
}

Vec3 log(const Mat3& R) {
  Eigen::Quaterniond q(R);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < 1e-12) return 2.0 * v / q.w();
  const double theta = 2.0 * std::atan2(n, q.w());
  return (theta / n) * v;
}

Mat3 left_jacobian_inverse(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  const double c = 1.0 / (theta * theta) -
                   (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * W + c * W * W;
}

Mat3 normalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    out = U * svd.matrixV().transpose();
  }
  return out;
}

}  // namespace so3

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width < 2 || height < 2) throw Error(ErrorCode::InvalidArgument, "image must be at least 2x2");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

CameraIntrinsics CameraIntrinsics::scaled(double s) const {
  CameraIntrinsics out = *this;
  out.fx *= s;
  out.fy *= s;
  out.cx *= s;
  out.cy *= s;
  out.width = std::max(2, static_cast<int>(std::lround(width * s)));
  out.height = std::max(2, static_cast<int>(std::lround(height * s)));
  return out;
}

Vec3 CameraIntrinsics::unproject(const Vec2& pixel) const {
  return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0};
}

Pose Pose::from_center(const Mat3& camera_to_world, const Vec3& center) {
  Pose p;
  p.rotation = camera_to_world.transpose();
  p.translation = -p.rotation * center;
  return p;
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.transpose();
  p.translation = -p.rotation * translation;
  return p;
}

Pose Pose::perturbed(const Eigen::Matrix<double, 6, 1>& delta) const {
  const Mat3 dR = so3::exp(delta.head<3>());
  Pose p;
  p.rotation = dR * rotation;
  p.translation = dR * translation + delta.tail<3>();
  return p;
}

bool Pose::is_valid_rotation(double tol) const {
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

double GroundPolygon::area() const {
  const std::size_t n = vertices.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = vertices[i];
    const auto& q = vertices[(i + 1) % n];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(twice);
}

Vec2 project(const CameraIntrinsics& K, const Pose& pose, const Vec3& point) {
  const Vec3 X = pose.transform(point);
  if (!(X.z() > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "point is not in front of the camera");
  return {K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy};
}

Vec3 back_project(const CameraIntrinsics& K, const Pose& pose, const Vec2& pixel, double depth) {
  const Vec3 camera_point = K.unproject(pixel) * depth;
  return pose.rotation.transpose() * (camera_point - pose.translation);
}

ReprojectionResidual reprojection_residual(const Vec2& observation, const CameraIntrinsics& K,
                                           const Pose& pose, const Vec3& point) {
  const Vec3 X = pose.transform(point);
  const double z = X.z();
  if (!(z > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "point is not in front of the camera");
  const double inv_z = 1.0 / z;

  ReprojectionResidual out;
  out.depth = z;
  out.residual = Vec2(K.fx * X.x() * inv_z + K.cx, K.fy * X.y() * inv_z + K.cy) - observation;

  Eigen::Matrix<double, 2, 3> d_proj;
  d_proj << K.fx * inv_z, 0.0, -K.fx * X.x() * inv_z * inv_z,
            0.0, K.fy * inv_z, -K.fy * X.y() * inv_z * inv_z;

  out.d_pose.leftCols<3>() = -d_proj * so3::skew(X);
  out.d_pose.rightCols<3>() = d_proj;
  out.d_point = d_proj * pose.rotation;
  return out;
}

Vec3 triangulate(std::span<const PixelObservation> observations,
                 const std::map<FrameId, Pose>& poses,
                 const std::map<FrameId, CameraIntrinsics>& intrinsics) {
  struct Ray {
    const Pose* pose;
    Vec3 normalized;
    Vec3 center;
    Vec3 direction;
  };
  std::vector<Ray> rays;
  std::set<FrameId> seen;
  for (const auto& obs : observations) {
    auto pit = poses.find(obs.frame_id);
    auto kit = intrinsics.find(obs.frame_id);
    if (pit == poses.end() || kit == intrinsics.end()) continue;
    if (!seen.insert(obs.frame_id).second) continue;
    const Vec3 x = kit->second.unproject(obs.pixel);
    rays.push_back({&pit->second, x, pit->second.center(),
                    (pit->second.rotation.transpose() * x).normalized()});
  }
  if (rays.size() < 2) throw Error(ErrorCode::DegenerateGeometry, "fewer than two usable observations");

  double max_angle = 0.0;
  double max_baseline = 0.0;
  Vec3 origin = Vec3::Zero();
  for (const auto& r : rays) origin += r.center;
  origin /= static_cast<double>(rays.size());
  double spread = 0.0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    spread += (rays[i].center - origin).norm();
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      const double c = std::clamp(rays[i].direction.dot(rays[j].direction), -1.0, 1.0);
      max_angle = std::max(max_angle, std::acos(c));
      max_baseline = std::max(max_baseline, (rays[i].center - rays[j].center).norm());
    }
  }
  if (max_angle < 1e-6) throw Error(ErrorCode::DegenerateGeometry, "rays are parallel");
  if (max_baseline <= 0.0) throw Error(ErrorCode::DegenerateGeometry, "zero baseline");
  spread /= static_cast<double>(rays.size());
  const double scale = spread > 0.0 ? 1.0 / spread : 1.0;

  // Work in a frame centred on the cameras and scaled to unit spread so the
  // homogeneous system stays well conditioned for large world coordinates.
  Eigen::MatrixXd A(2 * rays.size(), 4);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Pose& p = *rays[i].pose;
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = p.rotation;
    P.col(3) = scale * (p.rotation * origin + p.translation);
    const Vec3& x = rays[i].normalized;
    A.row(2 * i) = x.x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = x.y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14 * h.head<3>().norm())
    throw Error(ErrorCode::DegenerateGeometry, "point at infinity");
  const Vec3 point = origin + h.head<3>() / (h(3) * scale);

  for (const auto& r : rays) {
    if (!(r.pose->transform(point).z() > 0.0))
      throw Error(ErrorCode::DegenerateGeometry, "triangulated point behind a camera");
  }
  return point;
}

GroundPolygon footprint(const Frame& frame, double ground_elevation) {
  if (!frame.gnss_prior) throw Error(ErrorCode::MissingPrior, "frame has no GNSS prior");
  return footprint(frame.intrinsics, frame.gnss_prior->pose, ground_elevation);
}

GroundPolygon footprint(const CameraIntrinsics& K, const Pose& pose, double ground_elevation) {
  const Vec3 C = pose.center();
  if (!(C.z() > ground_elevation))
    throw Error(ErrorCode::InvalidArgument, "camera is not above the ground plane");
  const double w = K.width;
  const double h = K.height;
  const Vec2 corners[4] = {{0.0, 0.0}, {w, 0.0}, {w, h}, {0.0, h}};
  GroundPolygon poly;
  for (const auto& c : corners) {
    const Vec3 d = pose.rotation.transpose() * K.unproject(c);
    if (!(d.z() < -1e-12 * d.norm())) throw Error(ErrorCode::HorizonRay, "corner ray misses the ground");
    const double s = (ground_elevation - C.z()) / d.z();
    const Vec3 g = C + s * d;
    poly.vertices.emplace_back(g.x(), g.y());
  }
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& p = poly.vertices[i];
    const auto& q = poly.vertices[(i + 1) % 4];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  if (twice < 0.0) std::reverse(poly.vertices.begin(), poly.vertices.end());
  return poly;
}

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
std::vector<Eigen::Vector2d> clip_convex(std::vector<Eigen::Vector2d> subject,
                                         const std::vector<Eigen::Vector2d>& clip) {
  const std::size_t n = clip.size();
  for (std::size_t e = 0; e < n && !subject.empty(); ++e) {
    const auto& a = clip[e];
    const auto& b = clip[(e + 1) % n];
    std::vector<Eigen::Vector2d> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const auto& p = subject[i];
      const auto& q = subject[(i + 1) % subject.size()];
      const double sp = cross(a, b, p);
      const double sq = cross(a, b, q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

}  // namespace

double overlap_ratio(const GroundPolygon& a, const GroundPolygon& b) {
  const double area_a = a.area();
  if (!(area_a > 0.0)) throw Error(ErrorCode::InvalidArgument, "reference polygon has no area");
  std::vector<Eigen::Vector2d> clip = b.vertices;
  double twice = 0.0;
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const auto& p = clip[i];
    const auto& q = clip[(i + 1) % clip.size()];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  if (twice < 0.0) std::reverse(clip.begin(), clip.end());
  GroundPolygon inter{clip_convex(a.vertices, clip)};
  return std::clamp(inter.area() / area_a, 0.0, 1.0);
}

}  // namespace aerofuse
