#include "doctest.h"

#include <cmath>
#include <limits>

#include "aerofuse/error.hpp"
#include "aerofuse/metrics.hpp"
#include "aerofuse/rng.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;
using aerofuse::test::oracle_local_std;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

HeightRaster raster(int rows, int cols, std::vector<double> values) {
  HeightRaster r;
  r.rows = rows;
  r.cols = cols;
  r.cell_size = 1.0;
  r.height = std::move(values);
  return r;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("relative error") {
  CHECK(relative_error(40.0, 40.0) == 0.0);
  CHECK(relative_error(40.867, 40.0) == doctest::Approx(2.1675).epsilon(1e-12));
  CHECK(relative_error(26.123, 26.0) == doctest::Approx(0.473077).epsilon(1e-5));
  CHECK_THROWS_AS(relative_error(1.0, 0.0), Error);
}

TEST_CASE("marker errors") {
  const Vec3 a(0, 0, 0), b(40, 0, 26);
  const MarkerPair perfect{"A", "B", a, b, 40.0, 26.0};
  const MarkerErrors p = marker_errors(std::span<const MarkerPair>(&perfect, 1));
  CHECK(p.e_xy == 0.0);
  CHECK(p.e_z == 0.0);

  const MarkerPair scaled{"A", "B", 1.01 * a, 1.01 * b, 40.0, 26.0};
  const MarkerErrors s = marker_errors(std::span<const MarkerPair>(&scaled, 1));
  CHECK(s.e_xy == doctest::Approx(0.40));
  CHECK(s.e_z == doctest::Approx(0.26));
  CHECK(s.rel_xy_pct == doctest::Approx(1.0));
  CHECK(s.rel_z_pct == doctest::Approx(1.0));
  REQUIRE(s.pairs.size() == 1);
  CHECK(s.pairs[0].measured_xy == doctest::Approx(40.4));
  CHECK_THROWS_AS(marker_errors({}), Error);
}

TEST_CASE("coverage") {
  CHECK(coverage(raster(2, 2, {1, 2, 3, 4})) == 1.0);
  CHECK(coverage(raster(2, 2, {1, kNaN, kNaN, 4})) == 0.5);
  CHECK(coverage(raster(1, 3, {kNaN, kNaN, kNaN})) == 0.0);
}

TEST_CASE("global spread") {
  CHECK(sigma_global(raster(1, 3, {5, 5, 5})) == 0.0);
  CHECK(sigma_global(raster(1, 2, {0, 2})) == 1.0);
  CHECK(nmad(raster(1, 3, {5, 5, 5})) == 0.0);
  CHECK(nmad(raster(1, 4, {1, 2, 3, 100})) == 1.4826);
  CHECK_THROWS_AS(sigma_global(raster(1, 2, {1, kNaN})), Error);
  CHECK_THROWS_AS(nmad(raster(1, 1, {kNaN})), Error);
}

TEST_CASE("Gaussian cells") {
  Rng rng(12345);
  std::vector<double> v(1000000);
  for (double& x : v) x = rng.normal(3.0, 1.0);
  const HeightRaster r = raster(1000, 1000, std::move(v));
  CHECK(std::abs(sigma_global(r) - 1.0) <= 0.01);
  CHECK(std::abs(nmad(r) - 1.0) <= 0.01);
}

TEST_CASE("mean local std") {
  CHECK(mean_local_std(raster(3, 3, std::vector<double>(9, 4.0))).value == 0.0);

  const HeightRaster spike = raster(3, 3, {0, 0, 0, 0, 3, 0, 0, 0, 0});
  const LocalStd s = mean_local_std(spike);
  CHECK(s.cells == 9);
  CHECK(s.value == doctest::Approx(1.179011).epsilon(1e-6));
  CHECK(s.value == oracle_local_std(spike, 3));

  std::vector<double> board;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) board.push_back((r + c) % 2);
  const HeightRaster cb = raster(8, 8, board);
  CHECK(mean_local_std(cb).value == oracle_local_std(cb, 3));
  CHECK(mean_local_std(cb, 5).value == oracle_local_std(cb, 5));

  const LocalStd lonely = mean_local_std(raster(3, 3, {1, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, 2}));
  CHECK(!lonely.defined());
  CHECK(lonely.value == 0.0);
  CHECK_THROWS_AS(mean_local_std(spike, 4), Error);
}

TEST_CASE("mean local std matches the window oracle on random rasters") {
  Rng rng(77);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const int rows = 1 + static_cast<int>(rng.below(10));
    const int cols = 1 + static_cast<int>(rng.below(10));
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = rng.bernoulli(0.2) ? kNaN : rng.normal(10.0, 3.0);
    const HeightRaster r = raster(rows, cols, std::move(v));
    if (mean_local_std(r).value != oracle_local_std(r, 3)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("quality report") {
  const QualityReport q = evaluate_dsm(raster(2, 2, {1, 2, kNaN, 4}));
  CHECK(q.coverage == 0.75);
  CHECK(q.valid_cells == 3);
  const std::string text = format_report(q);
  CHECK(text.find("coverage=0.750000\n") != std::string::npos);
  CHECK(text.find("window_k=3\n") != std::string::npos);
}

}  // TEST_SUITE
