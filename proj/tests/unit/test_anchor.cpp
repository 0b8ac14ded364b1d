#include "doctest.h"

#include "aerofuse/anchor.hpp"
#include "aerofuse/error.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;

namespace {

Frame nadir_frame(FrameId id) {
  Frame f;
  f.frame_id = id;
  f.intrinsics = aerofuse::test::test_camera();
  return f;
}

BaSolution solution_with(const std::vector<Vec3>& points, const Pose& pose) {
  BaSolution s;
  s.poses[0] = pose;
  TrackId id = 0;
  for (const auto& p : points) {
    TiePoint tp;
    tp.position = p;
    tp.track_id = id;
    tp.uncertainty = 0.01;
    tp.observing_frames = {0};
    s.points[id++] = tp;
  }
  return s;
}

AnchorMap blank(int w, int h) {
  AnchorMap m;
  m.width = w;
  m.height = h;
  return m;
}

}  // namespace

TEST_SUITE("anchor") {

TEST_CASE("point below the camera lands on the principal point") {
  const Pose pose = aerofuse::test::nadir_pose(Vec3(3, 4, 50));
  const AnchorMap map = build_anchor_map(solution_with({Vec3(3, 4, 0)}, pose), nadir_frame(0));
  REQUIRE(map.size() == 1);
  const auto& [key, cell] = *map.cells.begin();
  CHECK(key == PixelKey{400, 600});
  CHECK(cell.depth == doctest::Approx(50.0));
  CHECK(cell.uncertainty == doctest::Approx(0.01));
}

TEST_CASE("collisions keep the nearer point") {
  const Pose pose = aerofuse::test::nadir_pose(Vec3(0, 0, 50));
  const AnchorMap map = build_anchor_map(solution_with({Vec3(0, 0, -2), Vec3(0, 0, 2)}, pose), nadir_frame(0));
  REQUIRE(map.size() == 1);
  CHECK(map.cells.begin()->second.depth == doctest::Approx(48.0));
  CHECK(map.cells.begin()->second.track_id == 1);
}

TEST_CASE("points outside the frame or behind the camera are skipped") {
  const Pose pose = aerofuse::test::nadir_pose(Vec3(0, 0, 50));
  const auto sol = solution_with({Vec3(0, 0, 0), Vec3(500, 0, 0), Vec3(0, 0, 80)}, pose);
  CHECK(build_anchor_map(sol, nadir_frame(0)).size() == 1);
  const auto none = solution_with({Vec3(500, 0, 0)}, pose);
  try {
    build_anchor_map(none, nadir_frame(0));
    FAIL("expected EmptyAnchor");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyAnchor);
  }
}

TEST_CASE("tile coverage") {
  AnchorMap m = blank(64, 64);
  CHECK(anchor_coverage(m, 16) == 0.0);
  CHECK(anchor_grid_coverage(m, 2, 2) == 0.0);
  m.cells[{5, 5}] = {10.0, 0.0, 0};
  m.cells[{5, 40}] = {10.0, 0.0, 1};
  m.cells[{40, 5}] = {10.0, 0.0, 2};
  m.cells[{40, 40}] = {10.0, 0.0, 3};
  CHECK(anchor_grid_coverage(m, 2, 2) == 1.0);
  CHECK(anchor_coverage(m, 32) == 1.0);
  CHECK(anchor_coverage(m, 16) == doctest::Approx(4.0 / 16.0));
  AnchorMap full = blank(32, 32);
  for (int r = 0; r < 32; r += 8)
    for (int c = 0; c < 32; c += 8) full.cells[{r, c}] = {1.0, 0.0, 0};
  CHECK(anchor_coverage(full, 8) == 1.0);
  CHECK(anchor_grid_coverage(full, 4, 4) == 1.0);
}

TEST_CASE("partial border tiles count") {
  AnchorMap m = blank(40, 20);
  m.cells[{0, 0}] = {1.0, 0.0, 0};
  CHECK(anchor_coverage(m, 16) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("depth outliers are removed") {
  AnchorMap m = blank(100, 100);
  for (int r = 5; r < 100; r += 10)
    for (int c = 5; c < 100; c += 10) m.cells[{r, c}] = {50.0 + 0.01 * c, 0.0, 0};
  m.cells[{45, 45}].depth = 30.0;
  const int removed = reject_depth_outliers(m);
  CHECK(removed == 1);
  CHECK(m.cells.count({45, 45}) == 0);
  CHECK(m.size() == 99);
  CHECK(reject_depth_outliers(m) == 0);
}

}  // TEST_SUITE
