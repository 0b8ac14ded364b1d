#include "doctest.h"

#include <cmath>
#include <functional>

#include "aerofuse/error.hpp"
#include "aerofuse/fusion.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;
using aerofuse::test::nadir_pose;
using aerofuse::test::plane_depth;

namespace {

const CameraIntrinsics kSmall{200.0, 200.0, 100.0, 75.0, 200, 150};

TsdfVolume volume_for(const DepthMap& d, double voxel = 0.25) {
  const double trunc = 3.0 * voxel;
  const auto [lo, hi] = depth_bounds(d, trunc);
  return TsdfVolume::covering(lo, hi, voxel, trunc);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("single view of a plane") {
  const DepthMap d = plane_depth(kSmall, nadir_pose(Vec3(0, 0, 50)), Vec3::UnitZ(), 0.0);
  TsdfVolume vol = volume_for(d);
  const IntegrationStats st = integrate_depth(vol, d);
  CHECK(st.updated_voxels > 0);
  const PointCloud cloud = extract_point_cloud(vol);
  REQUIRE(cloud.points.size() > 1000);
  double worst = 0.0;
  for (const auto& p : cloud.points) worst = std::max(worst, std::abs(p.z()));
  CHECK(worst <= 0.125);
}

TEST_CASE("integrating the same map twice") {
  const DepthMap d = plane_depth(kSmall, nadir_pose(Vec3(1, 2, 40)), Vec3(0.1, 0.05, 1).normalized(), 0.3);
  TsdfVolume once = volume_for(d);
  integrate_depth(once, d);
  TsdfVolume twice = once;
  integrate_depth(twice, d);
  const auto& e = once.extent();
  bool same_sdf = true, doubled = true;
  for (std::int64_t k = 0; k < e[2]; ++k)
    for (std::int64_t j = 0; j < e[1]; ++j)
      for (std::int64_t i = 0; i < e[0]; ++i) {
        if (once.sdf(i, j, k) != twice.sdf(i, j, k)) same_sdf = false;
        if (twice.weight(i, j, k) != 2.0f * once.weight(i, j, k)) doubled = false;
      }
  CHECK(same_sdf);
  CHECK(doubled);
}

TEST_CASE("weights saturate at the maximum") {
  const DepthMap d = plane_depth(kSmall, nadir_pose(Vec3(0, 0, 30)), Vec3::UnitZ(), 0.0);
  const auto [lo, hi] = depth_bounds(d, 0.75);
  TsdfVolume vol = TsdfVolume::covering(lo, hi, 0.25, 0.75, 3);
  for (int i = 0; i < 5; ++i) integrate_depth(vol, d);
  const auto& e = vol.extent();
  float wmax = 0.0f;
  for (std::int64_t k = 0; k < e[2]; ++k)
    for (std::int64_t j = 0; j < e[1]; ++j)
      for (std::int64_t i = 0; i < e[0]; ++i) wmax = std::max(wmax, vol.weight(i, j, k));
  CHECK(wmax == 3.0f);
}

TEST_CASE("several views of a tilted plane") {
  const Vec3 n = Vec3(0.08, -0.05, 1.0).normalized();
  const double offset = 1.0;
  std::vector<DepthMap> maps;
  for (int f = 0; f < 5; ++f) maps.push_back(plane_depth(kSmall, nadir_pose(Vec3(4.0 * f, 0.5 * f, 45)), n, offset, f));
  TsdfVolume vol(0.25, 0.75);
  for (const auto& d : maps) {
    const auto [lo, hi] = depth_bounds(d, 0.75);
    vol.grow_to_contain(lo, hi);
    integrate_depth(vol, d);
  }
  const PointCloud cloud = extract_point_cloud(vol);
  REQUIRE(cloud.points.size() > 1000);
  double worst = 0.0, sq = 0.0;
  for (const auto& p : cloud.points) {
    const double e = std::abs(n.dot(p) - offset);
    worst = std::max(worst, e);
    sq += e * e;
  }
  CHECK(worst <= 0.125);
  CHECK(std::sqrt(sq / static_cast<double>(cloud.points.size())) < 0.0625);
}

TEST_CASE("growing keeps stored voxels") {
  const DepthMap d = plane_depth(kSmall, nadir_pose(Vec3(0, 0, 20)), Vec3::UnitZ(), 0.0);
  TsdfVolume vol = volume_for(d);
  integrate_depth(vol, d);
  const auto before = extract_point_cloud(vol);
  const std::size_t weighted = vol.weighted_voxels();
  vol.grow_to_contain(Vec3(-40, -40, -5), Vec3(40, 40, 5));
  CHECK(vol.weighted_voxels() == weighted);
  const auto after = extract_point_cloud(vol);
  CHECK(after.points.size() == before.points.size());
  const auto origin = vol.lattice_origin();
  vol.grow_to_contain(Vec3(0, 0, 0), Vec3(1, 1, 1));
  CHECK(vol.lattice_origin() == origin);
}

TEST_CASE("error cases") {
  TsdfVolume empty(0.25, 0.75);
  CHECK(code_of([&] { extract_point_cloud(empty); }) == ErrorCode::EmptyVolume);
  const DepthMap d = plane_depth(kSmall, nadir_pose(Vec3(0, 0, 20)), Vec3::UnitZ(), 0.0);
  TsdfVolume far = TsdfVolume::covering(Vec3(500, 500, 0), Vec3(510, 510, 5), 0.25, 0.75);
  CHECK(code_of([&] { integrate_depth(far, d); }) == ErrorCode::OutOfVolume);
  CHECK_THROWS_AS(TsdfVolume(0.25, 0.1), Error);

  TsdfVolume lone = TsdfVolume::covering(Vec3(0, 0, 0), Vec3(1, 1, 1), 0.25, 0.75);
  auto cell = lone.at(1, 1, 1);
  *cell.sdf = 0.1f;
  *cell.weight = 1.0f;
  CHECK(extract_point_cloud(lone).points.empty());
}

TEST_CASE("DSM rasterization") {
  SUBCASE("flat points") {
    const std::vector<Vec3> pts{{0, 0, 10}, {1.2, 0.3, 10}, {3.9, 2.1, 10}};
    const HeightRaster r = rasterize_dsm(pts, 0.5);
    int occupied = 0, empty = 0;
    for (int i = 0; i < r.rows; ++i)
      for (int j = 0; j < r.cols; ++j) {
        if (std::isnan(r.at(i, j))) {
          ++empty;
        } else {
          CHECK(r.at(i, j) == 10.0);
          ++occupied;
        }
      }
    CHECK(occupied == 3);
    CHECK(empty > 0);
  }
  SUBCASE("maximum per cell") {
    const HeightRaster r = rasterize_dsm({{0.1, 0.1, 3}, {0.12, 0.08, 7}}, 0.5);
    const auto cell = r.cell_of(0.1, 0.1);
    REQUIRE(cell.has_value());
    CHECK(r.at(cell->first, cell->second) == 7.0);
  }
  SUBCASE("row zero is the southern edge") {
    const HeightRaster r = rasterize_dsm({{0, 0, 1}, {0, 10, 2}}, 1.0);
    CHECK(r.at(0, 0) == 1.0);
    CHECK(r.at(r.rows - 1, 0) == 2.0);
  }
}

TEST_CASE("orthomosaic") {
  const Pose centre = nadir_pose(Vec3(0, 0, 30));
  const Pose offset = nadir_pose(Vec3(6, 0, 30));
  const DepthMap d0 = plane_depth(kSmall, centre, Vec3::UnitZ(), 0.0, 0);
  const DepthMap d1 = plane_depth(kSmall, offset, Vec3::UnitZ(), 0.0, 1);
  RgbImage red(kSmall.width, kSmall.height), blue(kSmall.width, kSmall.height);
  for (int v = 0; v < kSmall.height; ++v)
    for (int u = 0; u < kSmall.width; ++u) {
      red.set(u, v, {200, 0, 0});
      blue.set(u, v, {0, 0, 200});
    }
  std::vector<Vec3> ground;
  for (double x = -5; x <= 10; x += 0.25)
    for (double y = -4; y <= 4; y += 0.25) ground.emplace_back(x, y, 0.0);
  const HeightRaster dsm = rasterize_dsm(ground, 0.5);

  SUBCASE("single nadir frame copies its image") {
    RgbImage gradient(kSmall.width, kSmall.height);
    for (int v = 0; v < kSmall.height; ++v)
      for (int u = 0; u < kSmall.width; ++u) gradient.set(u, v, {static_cast<std::uint8_t>(u), static_cast<std::uint8_t>(v), 7});
    const RgbImage o = orthomosaic({{0, &gradient, &d0}}, dsm);
    CHECK(o.width == dsm.cols);
    CHECK(o.height == dsm.rows);
    for (int r = 0; r < dsm.rows; ++r)
      for (int c = 0; c < dsm.cols; ++c) {
        const Eigen::Vector2d xy = dsm.cell_center(r, c);
        const Vec2 px = project(kSmall, centre, Vec3(xy.x(), xy.y(), 0.0));
        if (px.x() < 0 || px.y() < 0 || px.x() > kSmall.width - 1 || px.y() > kSmall.height - 1) continue;
        CHECK(o.at(c, r) == gradient.at(static_cast<int>(std::lround(px.x())), static_cast<int>(std::lround(px.y()))));
      }
  }
  SUBCASE("overlap takes the more nadir frame") {
    const RgbImage o = orthomosaic({{0, &red, &d0}, {1, &blue, &d1}}, dsm);
    const auto west = dsm.cell_of(-2.0, 0.0);
    const auto east = dsm.cell_of(8.0, 0.0);
    const auto mid_west = dsm.cell_of(2.7, 0.0);
    const auto mid_east = dsm.cell_of(3.3, 0.0);
    CHECK(o.at(west->second, west->first) == Rgb{200, 0, 0});
    CHECK(o.at(mid_west->second, mid_west->first) == Rgb{200, 0, 0});
    CHECK(o.at(mid_east->second, mid_east->first) == Rgb{0, 0, 200});
    CHECK(o.at(east->second, east->first) == Rgb{0, 0, 200});
  }
  SUBCASE("no imagery") {
    CHECK(code_of([&] { orthomosaic({{0, nullptr, &d0}}, dsm); }) == ErrorCode::NoImagery);
  }
  SUBCASE("colorize follows the mosaic") {
    const RgbImage o = orthomosaic({{0, &red, &d0}}, dsm);
    PointCloud cloud;
    cloud.points = {Vec3(0, 0, 0), Vec3(1, 1, 0)};
    colorize(cloud, dsm, o);
    REQUIRE(cloud.colors.size() == 2);
    CHECK(cloud.colors[0] == Rgb{200, 0, 0});
  }
}

}  // TEST_SUITE
