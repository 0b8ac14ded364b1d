#include "aerofuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aerofuse/error.hpp"

namespace aerofuse {

TsdfVolume::TsdfVolume(double voxel_size, double truncation, int max_weight)
    : voxel_size_(voxel_size), truncation_(truncation), max_weight_(max_weight) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel size must be positive");
  if (!(truncation >= 2.0 * voxel_size)) throw Error(ErrorCode::InvalidArgument, "truncation must be at least two voxels");
  if (max_weight < 1) throw Error(ErrorCode::InvalidArgument, "maximum weight must be at least 1");
}

TsdfVolume TsdfVolume::covering(const Vec3& lo, const Vec3& hi, double voxel_size, double truncation,
                                int max_weight) {
  TsdfVolume v(voxel_size, truncation, max_weight);
  v.grow_to_contain(lo, hi);
  return v;
}

Vec3 TsdfVolume::voxel_center(std::int64_t i, std::int64_t j, std::int64_t k) const {
  return voxel_size_ * Vec3(static_cast<double>(origin_[0] + i), static_cast<double>(origin_[1] + j),
                            static_cast<double>(origin_[2] + k));
}

std::size_t TsdfVolume::weighted_voxels() const {
  return static_cast<std::size_t>(std::count_if(weight_.begin(), weight_.end(), [](float w) { return w > 0.0f; }));
}

void TsdfVolume::grow_to_contain(const Vec3& lo, const Vec3& hi) {
  if (!lo.allFinite() || !hi.allFinite() || (hi.array() < lo.array()).any())
    throw Error(ErrorCode::InvalidArgument, "invalid volume bounds");
  Index3 new_lo, new_hi;
  for (int a = 0; a < 3; ++a) {
    new_lo[a] = static_cast<std::int64_t>(std::floor(lo[a] / voxel_size_));
    new_hi[a] = static_cast<std::int64_t>(std::ceil(hi[a] / voxel_size_));
    if (!sdf_.empty()) {
      new_lo[a] = std::min(new_lo[a], origin_[a]);
      new_hi[a] = std::max(new_hi[a], origin_[a] + extent_[a] - 1);
    }
  }
  Index3 new_extent;
  for (int a = 0; a < 3; ++a) new_extent[a] = new_hi[a] - new_lo[a] + 1;
  if (!sdf_.empty() && new_lo == origin_ && new_extent == extent_) return;

  const auto total = static_cast<std::size_t>(new_extent[0] * new_extent[1] * new_extent[2]);
  std::vector<float> sdf(total, static_cast<float>(truncation_));
  std::vector<float> weight(total, 0.0f);
  for (std::int64_t k = 0; k < extent_[2]; ++k) {
    for (std::int64_t j = 0; j < extent_[1]; ++j) {
      const std::int64_t nk = k + origin_[2] - new_lo[2];
      const std::int64_t nj = j + origin_[1] - new_lo[1];
      const std::size_t dst = static_cast<std::size_t>((nk * new_extent[1] + nj) * new_extent[0] + origin_[0] - new_lo[0]);
      const std::size_t src = linear(0, j, k);
      std::copy_n(sdf_.begin() + static_cast<std::ptrdiff_t>(src), extent_[0], sdf.begin() + static_cast<std::ptrdiff_t>(dst));
      std::copy_n(weight_.begin() + static_cast<std::ptrdiff_t>(src), extent_[0], weight.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  origin_ = new_lo;
  extent_ = new_extent;
  sdf_ = std::move(sdf);
  weight_ = std::move(weight);
}

namespace {

double max_ray_stretch(const CameraIntrinsics& K) {
  double s = 1.0;
  for (const Vec2& c : {Vec2(0, 0), Vec2(K.width, 0), Vec2(0, K.height), Vec2(K.width, K.height)})
    s = std::max(s, K.unproject(c).norm());
  return s;
}

}  // namespace

std::pair<Vec3, Vec3> depth_bounds(const DepthMap& depth, double margin) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  const Mat3 Rt = depth.pose.rotation.transpose();
  const Vec3 C = depth.pose.center();
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      if (!depth.is_valid(u, v)) continue;
      const Vec3 p = C + Rt * (depth.intrinsics.unproject(Vec2(u, v)) * depth.at(u, v));
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  if (!lo.allFinite()) throw Error(ErrorCode::EmptyAnchor, "depth map has no valid pixel");
  const double pad = margin * max_ray_stretch(depth.intrinsics);
  return {lo.array() - pad, hi.array() + pad};
}

IntegrationStats integrate_depth(TsdfVolume& volume, const DepthMap& depth) {
  if (depth.depth.size() != static_cast<std::size_t>(depth.width) * depth.height ||
      depth.valid.size() != depth.depth.size())
    throw Error(ErrorCode::DimensionMismatch, "depth map storage does not match its dimensions");
  if (!depth.pose.is_valid_rotation(1e-6)) throw Error(ErrorCode::InvalidArgument, "depth map pose is not a rotation");
  depth.intrinsics.validate();

  const double trunc = volume.truncation();
  const double vs = volume.voxel_size();
  auto [lo, hi] = depth_bounds(depth, trunc);
  const auto& org = volume.lattice_origin();
  const auto& ext = volume.extent();
  std::int64_t a[3], b[3];
  for (int ax = 0; ax < 3; ++ax) {
    a[ax] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(lo[ax] / vs)) - org[ax]);
    b[ax] = std::min<std::int64_t>(ext[ax] - 1, static_cast<std::int64_t>(std::floor(hi[ax] / vs)) - org[ax]);
    if (a[ax] > b[ax]) throw Error(ErrorCode::OutOfVolume, "depth frustum lies outside the volume");
  }

  const auto& K = depth.intrinsics;
  const Mat3& R = depth.pose.rotation;
  const Vec3& t = depth.pose.translation;
  const auto wmax = static_cast<float>(volume.max_weight());
  IntegrationStats stats;
  for (std::int64_t k = a[2]; k <= b[2]; ++k) {
    for (std::int64_t j = a[1]; j <= b[1]; ++j) {
      for (std::int64_t i = a[0]; i <= b[0]; ++i) {
        ++stats.visited_voxels;
        const Vec3 X = R * volume.voxel_center(i, j, k) + t;
        if (!(X.z() > 0.0)) continue;
        const double u = K.fx * X.x() / X.z() + K.cx;
        const double v = K.fy * X.y() / X.z() + K.cy;
        if (!(u >= 0.0 && v >= 0.0 && u <= depth.width - 1 && v <= depth.height - 1)) continue;
        const int u0 = std::min(static_cast<int>(u), depth.width - 2);
        const int v0 = std::min(static_cast<int>(v), depth.height - 2);
        if (!depth.is_valid(u0, v0) || !depth.is_valid(u0 + 1, v0) || !depth.is_valid(u0, v0 + 1) ||
            !depth.is_valid(u0 + 1, v0 + 1))
          continue;
        const double fu = u - u0, fv = v - v0;
        const double d = (1 - fv) * ((1 - fu) * depth.at(u0, v0) + fu * depth.at(u0 + 1, v0)) +
                         fv * ((1 - fu) * depth.at(u0, v0 + 1) + fu * depth.at(u0 + 1, v0 + 1));
        const double s = d - X.z();
        if (std::abs(s) > trunc) continue;
        auto cell = volume.at(i, j, k);
        const float w = *cell.weight;
        *cell.sdf = static_cast<float>((w * static_cast<double>(*cell.sdf) + s) / (w + 1.0));
        *cell.weight = std::min(w + 1.0f, wmax);
        ++stats.updated_voxels;
      }
    }
  }
  return stats;
}

PointCloud extract_point_cloud(const TsdfVolume& volume) {
  if (volume.empty() || volume.weighted_voxels() == 0) throw Error(ErrorCode::EmptyVolume, "volume holds no data");
  PointCloud cloud;
  const auto& ext = volume.extent();
  for (std::int64_t k = 0; k < ext[2]; ++k) {
    for (std::int64_t j = 0; j < ext[1]; ++j) {
      for (std::int64_t i = 0; i < ext[0]; ++i) {
        if (volume.weight(i, j, k) <= 0.0f) continue;
        const double s0 = volume.sdf(i, j, k);
        const std::int64_t next[3][3] = {{i + 1, j, k}, {i, j + 1, k}, {i, j, k + 1}};
        for (const auto& n : next) {
          if (n[0] >= ext[0] || n[1] >= ext[1] || n[2] >= ext[2]) continue;
          if (volume.weight(n[0], n[1], n[2]) <= 0.0f) continue;
          const double s1 = volume.sdf(n[0], n[1], n[2]);
          if ((s0 > 0.0) == (s1 > 0.0) || s0 == s1) continue;
          const double f = s0 / (s0 - s1);
          const Vec3 c0 = volume.voxel_center(i, j, k);
          const Vec3 c1 = volume.voxel_center(n[0], n[1], n[2]);
          cloud.points.push_back(c0 + f * (c1 - c0));
        }
      }
    }
  }
  return cloud;
}

std::optional<std::pair<int, int>> HeightRaster::cell_of(double x, double y) const {
  const double c = std::floor((x - origin.x()) / cell_size);
  const double r = std::floor((y - origin.y()) / cell_size);
  if (!(c >= 0.0 && c < cols && r >= 0.0 && r < rows)) return std::nullopt;
  return std::make_pair(static_cast<int>(r), static_cast<int>(c));
}

HeightRaster rasterize_dsm(const std::vector<Vec3>& points, double cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "cell size must be positive");
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "no points to rasterize");
  Eigen::Vector2d lo = points.front().head<2>(), hi = lo;
  for (const auto& p : points) {
    lo = lo.cwiseMin(p.head<2>());
    hi = hi.cwiseMax(p.head<2>());
  }
  HeightRaster r;
  r.cell_size = cell_size;
  r.origin = lo.array() - 0.5 * cell_size;
  r.cols = static_cast<int>(std::floor((hi.x() - r.origin.x()) / cell_size)) + 1;
  r.rows = static_cast<int>(std::floor((hi.y() - r.origin.y()) / cell_size)) + 1;
  r.height.assign(static_cast<std::size_t>(r.rows) * r.cols, std::numeric_limits<double>::quiet_NaN());
  for (const auto& p : points) {
    const auto cell = r.cell_of(p.x(), p.y());
    if (!cell) continue;
    double& h = r.at(cell->first, cell->second);
    if (std::isnan(h) || p.z() > h) h = p.z();
  }
  return r;
}

RgbImage orthomosaic(const std::vector<OrthoSource>& sources, const HeightRaster& dsm, const OrthoConfig& config) {
  std::vector<const OrthoSource*> usable;
  for (const auto& s : sources)
    if (s.image && s.depth) usable.push_back(&s);
  if (usable.empty()) throw Error(ErrorCode::NoImagery, "no frame carries imagery");

  RgbImage out(dsm.cols, dsm.rows);
  for (int r = 0; r < dsm.rows; ++r) {
    for (int c = 0; c < dsm.cols; ++c) {
      const double h = dsm.at(r, c);
      if (std::isnan(h)) continue;
      const Eigen::Vector2d xy = dsm.cell_center(r, c);
      const Vec3 P(xy.x(), xy.y(), h);
      double best_cos = -2.0;
      Rgb best{0, 0, 0};
      for (const OrthoSource* s : usable) {
        const DepthMap& d = *s->depth;
        const Vec3 X = d.pose.transform(P);
        if (!(X.z() > 0.0)) continue;
        const int u = static_cast<int>(std::lround(d.intrinsics.fx * X.x() / X.z() + d.intrinsics.cx));
        const int v = static_cast<int>(std::lround(d.intrinsics.fy * X.y() / X.z() + d.intrinsics.cy));
        if (u < 0 || v < 0 || u >= d.width || v >= d.height) continue;
        if (u >= s->image->width || v >= s->image->height) continue;
        if (!d.is_valid(u, v) || std::abs(d.at(u, v) - X.z()) > config.occlusion_tolerance * X.z()) continue;
        const Vec3 ray = d.pose.center() - P;
        const double cosang = ray.z() / ray.norm();
        if (cosang > best_cos) {
          best_cos = cosang;
          best = s->image->at(u, v);
        }
      }
      out.set(c, r, best);
    }
  }
  return out;
}

void colorize(PointCloud& cloud, const HeightRaster& dsm, const RgbImage& ortho) {
  if (ortho.width != dsm.cols || ortho.height != dsm.rows)
    throw Error(ErrorCode::DimensionMismatch, "orthomosaic is not aligned with the DSM");
  cloud.colors.clear();
  cloud.colors.reserve(cloud.points.size());
  for (const auto& p : cloud.points) {
    const auto cell = dsm.cell_of(p.x(), p.y());
    cloud.colors.push_back(cell ? ortho.at(cell->second, cell->first) : Rgb{0, 0, 0});
  }
}

}  // namespace aerofuse
