#include "aerofuse/epipolar.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "aerofuse/error.hpp"
#include "aerofuse/rng.hpp"

namespace aerofuse {

namespace {

// Similarity that moves the points' centroid to the origin and their mean
// distance to sqrt(2).
Mat3 hartley_transform(std::span<const Vec3> pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p.head<2>() / p.z();
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p.head<2>() / p.z() - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Mat3 T;
  T << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return T;
}

Mat3 project_to_essential(const Mat3& E) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
}

// Depths (in a, in b) of the two-view intersection for motion (R, t).
Eigen::Vector2d two_view_depths(const Mat3& R, const Vec3& t, const Vec3& xa, const Vec3& xb) {
  Eigen::Matrix<double, 3, 2> A;
  A.col(0) = R * xa;
  A.col(1) = -xb;
  return (A.transpose() * A).ldlt().solve(-A.transpose() * t);
}

int count_in_front(const Mat3& R, const Vec3& t, std::span<const Vec3> xa, std::span<const Vec3> xb,
                   const std::vector<std::uint8_t>& mask) {
  int count = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    if (!mask[i]) continue;
    const Eigen::Vector2d d = two_view_depths(R, t, xa[i], xb[i]);
    if (d.x() > 0.0 && d.y() > 0.0) ++count;
  }
  return count;
}

// Motions (R, t) explaining the plane-induced homography H between
// normalized coordinates, from the SVD decomposition with d' > 0.
std::vector<std::pair<Mat3, Vec3>> decompose_homography(const Mat3& H) {
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  std::vector<std::pair<Mat3, Vec3>> out;
  if (!(sv(1) > 0.0)) return out;
  const double d1 = sv(0) / sv(1), d3 = sv(2) / sv(1);
  const double a = d1 * d1 - 1.0, b = 1.0 - d3 * d3, c = d1 * d1 - d3 * d3;
  if (c < 1e-12) return out;
  const Mat3& U = svd.matrixU();
  const Mat3& V = svd.matrixV();
  const double s = U.determinant() * V.determinant();
  const double x1 = std::sqrt(std::max(0.0, a / c));
  const double x3 = std::sqrt(std::max(0.0, b / c));
  const double cos_t = (1.0 + d1 * d3) / (d1 + d3);
  const double sin_t = std::sqrt(std::max(0.0, a * b)) / (d1 + d3);
  for (const double e1 : {1.0, -1.0}) {
    for (const double e3 : {1.0, -1.0}) {
      Mat3 Rp;
      Rp << cos_t, 0.0, -e1 * e3 * sin_t, 0.0, 1.0, 0.0, e1 * e3 * sin_t, 0.0, cos_t;
      const Vec3 tp = (d1 - d3) * Vec3(e1 * x1, 0.0, -e3 * x3);
      const Mat3 R = s * U * Rp * V.transpose();
      const Vec3 t = U * tp;
      if (t.norm() > 0.0) out.emplace_back(R, t.normalized());
    }
  }
  return out;
}

// Alternative motions for a near-planar scene: the homography of the
// dominant plane under (R, t) admits a second physical decomposition.
std::vector<std::pair<Mat3, Vec3>> planar_alternatives(const Mat3& R, const Vec3& t, std::span<const Vec3> xa,
                                                        std::span<const Vec3> xb,
                                                        const std::vector<std::uint8_t>& mask) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    if (!mask[i]) continue;
    const Eigen::Vector2d d = two_view_depths(R, t, xa[i], xb[i]);
    if (d.x() > 0.0 && d.y() > 0.0) pts.push_back(d.x() * xa[i]);
  }
  if (pts.size() < 3) return {};
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) scatter += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  Vec3 n = eig.eigenvectors().col(0);
  double dist = n.dot(centroid);
  if (dist < 0.0) {
    n = -n;
    dist = -dist;
  }
  if (!(dist > 0.0)) return {};
  return decompose_homography(R + t * n.transpose() / dist);
}

struct PoseFit {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::UnitX();
  std::vector<std::uint8_t> mask;
  int count = 0;
  double msac = std::numeric_limits<double>::infinity();
};

// Levenberg-Marquardt on the symmetric epipolar distances of the current
// consensus set over the five motion degrees of freedom, re-selecting the
// consensus set between rounds.
PoseFit refine_motion(Mat3 R, Vec3 t, std::span<const Correspondence> corr, const CameraIntrinsics& Ka,
                      const CameraIntrinsics& Kb, double thr) {
  const std::size_t n = corr.size();
  auto residuals = [&](const Mat3& Rm, const Vec3& tm, Eigen::VectorXd& r) {
    const Mat3 F = fundamental_from_essential(so3::skew(tm) * Rm, Ka, Kb);
    for (std::size_t i = 0; i < n; ++i) r(static_cast<Eigen::Index>(i)) = symmetric_epipolar_distance(F, corr[i].a, corr[i].b);
  };
  auto retract = [](const Mat3& Rm, const Vec3& tm, const Eigen::Matrix<double, 5, 1>& d) {
    const Vec3 u = tm.unitOrthogonal();
    const Vec3 v = tm.cross(u);
    return std::pair<Mat3, Vec3>(so3::exp(d.head<3>()) * Rm, (tm + d(3) * u + d(4) * v).normalized());
  };
  auto score = [&](const Eigen::VectorXd& r, PoseFit& fit) {
    fit.mask.assign(n, 0);
    fit.count = 0;
    fit.msac = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = r(static_cast<Eigen::Index>(i));
      const bool in = d < thr;
      fit.mask[i] = in ? 1 : 0;
      fit.count += in ? 1 : 0;
      fit.msac += in ? d * d : thr * thr;
    }
  };

  Eigen::VectorXd r(static_cast<Eigen::Index>(n)), rp(r.size()), rm(r.size());
  residuals(R, t, r);
  PoseFit fit;
  fit.R = R;
  fit.t = t;
  score(r, fit);
  constexpr double step = 1e-6;
  for (int round = 0; round < 4; ++round) {
    const std::vector<std::uint8_t> mask = fit.mask;
    auto masked_cost = [&](const Eigen::VectorXd& v) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask[i] && std::isfinite(v(static_cast<Eigen::Index>(i)))) c += v(static_cast<Eigen::Index>(i)) * v(static_cast<Eigen::Index>(i));
      return c;
    };
    double cost = masked_cost(r);
    double lambda = 1e-3;
    for (int it = 0; it < 15; ++it) {
      Eigen::Matrix<double, Eigen::Dynamic, 5> J(r.size(), 5);
      for (int k = 0; k < 5; ++k) {
        Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
        d(k) = step;
        const auto [Rp, tp] = retract(R, t, d);
        const auto [Rn, tn] = retract(R, t, -d);
        residuals(Rp, tp, rp);
        residuals(Rn, tn, rm);
        J.col(k) = (rp - rm) / (2.0 * step);
      }
      Eigen::Matrix<double, 5, 5> H = Eigen::Matrix<double, 5, 5>::Zero();
      Eigen::Matrix<double, 5, 1> g = Eigen::Matrix<double, 5, 1>::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = J.row(static_cast<Eigen::Index>(i));
        if (!mask[i] || !row.allFinite() || !std::isfinite(r(static_cast<Eigen::Index>(i)))) continue;
        H += row.transpose() * row;
        g += row.transpose() * r(static_cast<Eigen::Index>(i));
      }
      bool improved = false;
      while (lambda < 1e8) {
        Eigen::Matrix<double, 5, 5> Hd = H;
        Hd.diagonal() *= 1.0 + lambda;
        const Eigen::Matrix<double, 5, 1> delta = -Hd.ldlt().solve(g);
        if (!delta.allFinite()) break;
        const auto [Rn, tn] = retract(R, t, delta);
        residuals(Rn, tn, rp);
        const double c = masked_cost(rp);
        if (c < cost) {
          R = Rn;
          t = tn;
          r = rp;
          lambda *= 0.3;
          improved = cost - c > 1e-10 * cost;
          cost = c;
          break;
        }
        lambda *= 10.0;
      }
      if (!improved) break;
    }
    PoseFit next;
    next.R = R;
    next.t = t;
    score(r, next);
    if (next.msac >= fit.msac) break;
    fit = std::move(next);
  }
  return fit;
}

}  // namespace

Mat3 homography_four_point(std::span<const Vec3> normalized_a, std::span<const Vec3> normalized_b) {
  const std::size_t n = normalized_a.size();
  if (n < 4 || normalized_b.size() != n)
    throw Error(ErrorCode::TooFewCorrespondences, "homography needs at least 4 pairs");
  const Mat3 Ta = hartley_transform(normalized_a);
  const Mat3 Tb = hartley_transform(normalized_b);
  Eigen::MatrixXd A(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = Ta * (normalized_a[i] / normalized_a[i].z());
    const Vec3 b = Tb * (normalized_b[i] / normalized_b[i].z());
    const auto r = static_cast<Eigen::Index>(2 * i);
    A.row(r) << 0.0, 0.0, 0.0, -a.x(), -a.y(), -1.0, b.y() * a.x(), b.y() * a.y(), b.y();
    A.row(r + 1) << a.x(), a.y(), 1.0, 0.0, 0.0, 0.0, -b.x() * a.x(), -b.x() * a.y(), -b.x();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Mat3 H = Tb.inverse() * Hn * Ta;
  // Scale so that the middle singular value is one and points keep positive depth.
  H /= Eigen::JacobiSVD<Mat3>(H).singularValues()(1);
  double agreement = 0.0;
  for (std::size_t i = 0; i < n; ++i) agreement += (H * normalized_a[i]).dot(normalized_b[i]);
  if (agreement < 0.0) H = -H;
  return H;
}

Mat3 essential_eight_point(std::span<const Vec3> normalized_a, std::span<const Vec3> normalized_b) {
  const std::size_t n = normalized_a.size();
  if (n < 8 || normalized_b.size() != n)
    throw Error(ErrorCode::TooFewCorrespondences, "eight-point needs at least 8 pairs");
  const Mat3 Ta = hartley_transform(normalized_a);
  const Mat3 Tb = hartley_transform(normalized_b);
  Eigen::MatrixXd A(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = Ta * (normalized_a[i] / normalized_a[i].z());
    const Vec3 b = Tb * (normalized_b[i] / normalized_b[i].z());
    A.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(),
        b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 En;
  En << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  const Mat3 E = project_to_essential(Tb.transpose() * En * Ta);
  return E / E.norm();
}

Mat3 fundamental_from_essential(const Mat3& E, const CameraIntrinsics& Ka, const CameraIntrinsics& Kb) {
  return Kb.matrix().inverse().transpose() * E * Ka.matrix().inverse();
}

double symmetric_epipolar_distance(const Mat3& F, const Vec2& a, const Vec2& b) {
  const Vec3 ha(a.x(), a.y(), 1.0);
  const Vec3 hb(b.x(), b.y(), 1.0);
  const Vec3 line_b = F * ha;
  const Vec3 line_a = F.transpose() * hb;
  const double algebraic = hb.dot(line_b);
  const double nb = line_b.head<2>().squaredNorm();
  const double na = line_a.head<2>().squaredNorm();
  if (nb <= 0.0 || na <= 0.0) return std::numeric_limits<double>::infinity();
  const double d2 = algebraic * algebraic * (1.0 / na + 1.0 / nb);
  return std::sqrt(0.5 * d2);
}

RelativePose decompose_essential(const Mat3& E, std::span<const Vec3> normalized_a,
                                 std::span<const Vec3> normalized_b) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;
  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 rotations[2] = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const Vec3 u3 = U.col(2).normalized();

  const std::size_t n = std::min<std::size_t>(normalized_a.size(), 500);
  RelativePose best;
  int best_count = -1;
  for (const Mat3& R : rotations) {
    for (const double sign : {1.0, -1.0}) {
      const Vec3 t = sign * u3;
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d d = two_view_depths(R, t, normalized_a[i], normalized_b[i]);
        if (d.x() > 0.0 && d.y() > 0.0) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best.rotation = R;
        best.translation_direction = t;
      }
    }
  }
  return best;
}

EpipolarResult ransac_epipolar_filter(std::span<const Correspondence> correspondences,
                                      const CameraIntrinsics& Ka, const CameraIntrinsics& Kb,
                                      const RansacConfig& config) {
  const std::size_t n = correspondences.size();
  if (n < 8) {
    throw Error(ErrorCode::TooFewCorrespondences,
                std::to_string(n) + " correspondences, at least 8 required");
  }
  std::vector<Vec3> xa(n), xb(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = Ka.unproject(correspondences[i].a);
    xb[i] = Kb.unproject(correspondences[i].b);
  }
  const double thr = config.threshold_px;

  auto score_essential = [&](const Mat3& E, std::vector<std::uint8_t>& mask, double& msac) {
    const Mat3 F = fundamental_from_essential(E, Ka, Kb);
    int count = 0;
    msac = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = symmetric_epipolar_distance(F, correspondences[i].a, correspondences[i].b);
      const bool in = d < thr;
      mask[i] = in ? 1 : 0;
      count += in ? 1 : 0;
      msac += in ? d * d : thr * thr;
    }
    return count;
  };
  // Homography transfer error in pixels of image b.
  const double homography_thr = 10.0 * thr;
  auto score_homography = [&](const Mat3& H, std::vector<std::uint8_t>& mask, double& msac) {
    int count = 0;
    msac = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 p = H * xa[i];
      double d = std::numeric_limits<double>::infinity();
      if (p.z() > 0.0) {
        const Vec3 q = p / p.z() - xb[i] / xb[i].z();
        d = std::hypot(Kb.fx * q.x(), Kb.fy * q.y());
      }
      const bool in = d < homography_thr;
      mask[i] = in ? 1 : 0;
      count += in ? 1 : 0;
      msac += in ? d * d : homography_thr * homography_thr;
    }
    return count;
  };

  // Generic adaptive RANSAC over minimal samples of size k.
  Rng rng(config.seed);
  std::vector<std::size_t> index(n);
  auto search = [&](std::size_t k, auto&& fit, auto&& score, Mat3& best_model, std::vector<std::uint8_t>& best_mask) {
    std::vector<Vec3> sa(k), sb(k);
    std::vector<std::uint8_t> mask(n);
    best_mask.assign(n, 0);
    int best_count = -1;
    double best_msac = std::numeric_limits<double>::infinity();
    long required = config.max_iters;
    for (long iter = 0; iter < std::min<long>(required, config.max_iters); ++iter) {
      std::iota(index.begin(), index.end(), std::size_t{0});
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.below(n - j));
        std::swap(index[j], index[r]);
        sa[j] = xa[index[j]];
        sb[j] = xb[index[j]];
      }
      Mat3 model;
      try {
        model = fit(sa, sb);
      } catch (const Error&) {
        continue;
      }
      if (!model.allFinite()) continue;
      double msac = 0.0;
      const int count = score(model, mask, msac);
      if (msac >= best_msac) continue;
      best_msac = msac;
      best_count = count;
      best_model = model;
      best_mask = mask;
      const double p_good = std::pow(static_cast<double>(count) / static_cast<double>(n), static_cast<double>(k));
      if (p_good >= 1.0 - 1e-15) {
        required = iter + 1;
      } else if (p_good > 0.0) {
        const double needed = std::log(1.0 - config.confidence) / std::log(1.0 - p_good);
        if (needed < static_cast<double>(config.max_iters))
          required = std::max<long>(iter + 1, static_cast<long>(std::ceil(needed)));
      }
    }
    // Refit on the consensus set while it grows.
    for (int round = 0; round < 5 && best_count >= static_cast<int>(k); ++round) {
      std::vector<Vec3> ia, ib;
      for (std::size_t i = 0; i < n; ++i) {
        if (!best_mask[i]) continue;
        ia.push_back(xa[i]);
        ib.push_back(xb[i]);
      }
      Mat3 model;
      try {
        model = fit(ia, ib);
      } catch (const Error&) {
        break;
      }
      double msac = 0.0;
      const int count = score(model, mask, msac);
      if (count < best_count || (count == best_count && msac >= best_msac)) break;
      best_count = count;
      best_msac = msac;
      best_model = model;
      best_mask = mask;
    }
    return best_count;
  };

  std::vector<std::pair<Mat3, Vec3>> candidates;
  Mat3 E = Mat3::Zero();
  std::vector<std::uint8_t> e_mask;
  if (search(8, essential_eight_point, score_essential, E, e_mask) >= 8) {
    std::vector<Vec3> ia, ib;
    for (std::size_t i = 0; i < n; ++i) {
      if (!e_mask[i]) continue;
      ia.push_back(xa[i]);
      ib.push_back(xb[i]);
    }
    const RelativePose linear = decompose_essential(E, ia, ib);
    candidates.emplace_back(linear.rotation, linear.translation_direction);
    // Linear estimates on low-relief scenes often land on the planar twin of
    // the true motion.
    for (auto& alt : planar_alternatives(linear.rotation, linear.translation_direction, xa, xb, e_mask))
      candidates.push_back(std::move(alt));
  }
  Mat3 H = Mat3::Zero();
  std::vector<std::uint8_t> h_mask;
  if (search(4, homography_four_point, score_homography, H, h_mask) >= 4)
    for (auto& c : decompose_homography(H)) candidates.push_back(std::move(c));

  PoseFit best;
  for (const auto& [R, t] : candidates) {
    PoseFit fit = refine_motion(R, t, correspondences, Ka, Kb, thr);
    if (2 * count_in_front(fit.R, fit.t, xa, xb, fit.mask) <= fit.count) continue;
    if (fit.msac < best.msac) best = std::move(fit);
  }
  if (best.count < 8 || static_cast<double>(best.count) < config.min_inlier_ratio * static_cast<double>(n))
    throw Error(ErrorCode::NoConsensus, "best epipolar model explains too few correspondences");

  EpipolarResult result;
  result.inliers = std::move(best.mask);
  result.inlier_count = best.count;
  result.essential = so3::skew(best.t) * best.R;
  result.essential /= result.essential.norm();
  result.pose.rotation = best.R;
  result.pose.translation_direction = best.t;
  return result;
}

}  // namespace aerofuse
