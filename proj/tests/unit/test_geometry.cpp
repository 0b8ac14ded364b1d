#include "doctest.h"

#include <cmath>

#include "aerofuse/error.hpp"
#include "aerofuse/geometry.hpp"
#include "aerofuse/rng.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;
using aerofuse::test::nadir_pose;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an aerofuse::Error");
  return ErrorCode::IoError;
}

Pose random_pose(Rng& rng) {
  Pose p;
  p.rotation = so3::exp(Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)));
  p.translation = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20));
  return p;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("projection of canonical points") {
  CameraIntrinsics unit{1.0, 1.0, 0.0, 0.0, 2, 2};
  const Vec2 origin = project(unit, Pose::identity(), Vec3(0, 0, 1));
  CHECK(origin.x() == 0.0);
  CHECK(origin.y() == 0.0);

  CameraIntrinsics K{1000.0, 1000.0, 960.0, 540.0, 1920, 1080};
  const Vec2 p = project(K, Pose::identity(), Vec3(1, 0.5, 10));
  CHECK(p.x() == doctest::Approx(1060.0).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(590.0).epsilon(1e-12));

  CHECK(code_of([&] { project(K, Pose::identity(), Vec3(0, 0, -1)); }) == ErrorCode::NonPositiveDepth);
  CHECK(code_of([&] { project(K, Pose::identity(), Vec3(1, 0, 0)); }) == ErrorCode::NonPositiveDepth);
}

TEST_CASE("back projection inverts projection") {
  Rng rng(3);
  const CameraIntrinsics K = aerofuse::test::test_camera();
  for (int i = 0; i < 20; ++i) {
    const Pose pose = random_pose(rng);
    const Vec2 px(rng.uniform(0, 1200), rng.uniform(0, 800));
    const double z = rng.uniform(1, 100);
    const Vec3 X = back_project(K, pose, px, z);
    CHECK((project(K, pose, X) - px).norm() < 1e-8);
    CHECK(pose.transform(X).z() == doctest::Approx(z));
  }
}

TEST_CASE("reprojection residual sign convention") {
  const CameraIntrinsics K = aerofuse::test::test_camera();
  const Pose pose = nadir_pose(Vec3(3, 4, 50));
  const Vec3 X(5, 2, 1);
  const Vec2 exact = project(K, pose, X);
  const auto zero = reprojection_residual(exact, K, pose, X);
  CHECK(zero.residual.norm() == 0.0);
  const auto shifted = reprojection_residual(exact + Vec2(1, -2), K, pose, X);
  CHECK(shifted.residual.x() == doctest::Approx(-1.0));
  CHECK(shifted.residual.y() == doctest::Approx(2.0));
}

TEST_CASE("analytic Jacobians match central differences") {
  Rng rng(11);
  const CameraIntrinsics K{800.0, 780.0, 400.0, 300.0, 800, 600};
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose pose = random_pose(rng);
    const Vec3 Xc(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(5, 50));
    const Vec3 X = pose.inverse().transform(Xc);
    const Vec2 obs(rng.uniform(0, 800), rng.uniform(0, 600));
    const auto r = reprojection_residual(obs, K, pose, X);

    Eigen::Matrix<double, 2, 6> fd_pose;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d[k] = h;
      const Vec2 plus = project(K, pose.perturbed(d), X);
      const Vec2 minus = project(K, pose.perturbed(-d), X);
      fd_pose.col(k) = (plus - minus) / (2 * h);
    }
    Eigen::Matrix<double, 2, 3> fd_point;
    for (int k = 0; k < 3; ++k) {
      Vec3 d = Vec3::Zero();
      d[k] = h;
      fd_point.col(k) = (project(K, pose, X + d) - project(K, pose, X - d)) / (2 * h);
    }
    CHECK((r.d_pose - fd_pose).norm() / fd_pose.norm() < 1e-5);
    CHECK((r.d_point - fd_point).norm() / fd_point.norm() < 1e-5);
  }
}

TEST_CASE("so3 exp and log are inverse") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Vec3 w = aerofuse::test::random_unit(rng) * rng.uniform(0.0, 3.1);
    const Mat3 R = so3::exp(w);
    CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0));
    CHECK((so3::log(R) - w).norm() < 1e-9);
  }
  CHECK(so3::log(Mat3::Identity()).norm() == 0.0);
  const Mat3 half_turn = so3::exp(Vec3(0, 0, M_PI));
  CHECK(so3::log(half_turn).norm() == doctest::Approx(M_PI));
}

TEST_CASE("triangulation") {
  const CameraIntrinsics K = aerofuse::test::test_camera();
  const std::map<FrameId, CameraIntrinsics> intr{{0, K}, {1, K}, {2, K}};
  const Vec3 P(5, 3, -40);

  SUBCASE("two noiseless views recover the point") {
    const std::map<FrameId, Pose> poses{{0, nadir_pose(Vec3(0, 0, 0))}, {1, nadir_pose(Vec3(12, 1, 0))}};
    const std::vector<PixelObservation> obs{{0, project(K, poses.at(0), P)}, {1, project(K, poses.at(1), P)}};
    CHECK((triangulate(obs, poses, intr) - P).norm() < 1e-6);
  }

  SUBCASE("identical poses are degenerate") {
    const std::map<FrameId, Pose> poses{{0, nadir_pose(Vec3(0, 0, 0))}, {1, nadir_pose(Vec3(0, 0, 0))}};
    const std::vector<PixelObservation> obs{{0, project(K, poses.at(0), P)}, {1, project(K, poses.at(1), P)}};
    CHECK(code_of([&] { triangulate(obs, poses, intr); }) == ErrorCode::DegenerateGeometry);
  }

  SUBCASE("three noisy views stay inside the Monte-Carlo spread") {
    const std::map<FrameId, Pose> poses{{0, nadir_pose(Vec3(-8, 0, 0))},
                                        {1, nadir_pose(Vec3(0, 0, 0))},
                                        {2, nadir_pose(Vec3(8, 0, 0))}};
    Rng rng(99);
    auto noisy = [&] {
      std::vector<PixelObservation> obs;
      for (FrameId f = 0; f < 3; ++f)
        obs.push_back({f, project(K, poses.at(f), P) + Vec2(rng.normal(0, 0.5), rng.normal(0, 0.5))});
      return triangulate(obs, poses, intr);
    };
    Vec3 mean = Vec3::Zero();
    Vec3 sq = Vec3::Zero();
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
      const Vec3 x = noisy();
      mean += x;
      sq += x.cwiseProduct(x);
    }
    mean /= draws;
    const Vec3 sigma = (sq / draws - mean.cwiseProduct(mean)).cwiseSqrt();
    const Vec3 sample = noisy();
    for (int k = 0; k < 3; ++k) CHECK(std::abs(sample[k] - P[k]) <= 3.0 * sigma[k]);
    CHECK((mean - P).norm() < 0.05);
  }
}

TEST_CASE("footprints") {
  SUBCASE("nadir rectangle") {
    const CameraIntrinsics K = aerofuse::test::test_camera();
    const GroundPolygon g = footprint(K, nadir_pose(Vec3(10, -5, 50)), 0.0);
    CHECK(g.area() == doctest::Approx((1200 * 50.0 / 750) * (800 * 50.0 / 750)));
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& v : g.vertices) c += v;
    c /= static_cast<double>(g.vertices.size());
    CHECK(c.x() == doctest::Approx(10.0));
    CHECK(c.y() == doctest::Approx(-5.0));
  }

  SUBCASE("2650 square meters at 0.85 cm per pixel") {
    const double f = 50.0 / 0.0085;
    const CameraIntrinsics K{f, f, 4032.0, 2268.0, 8064, 4536};
    const double area = footprint(K, nadir_pose(Vec3(0, 0, 50)), 0.0).area();
    CHECK(area == doctest::Approx(2650.0).epsilon(0.01));
  }

  SUBCASE("horizontal camera never meets the ground") {
    Mat3 R;
    R << 0, 0, 1, -1, 0, 0, 0, -1, 0;
    const Pose pose = Pose::from_center(R, Vec3(0, 0, 50));
    CHECK(code_of([&] { footprint(aerofuse::test::test_camera(), pose, 0.0); }) == ErrorCode::HorizonRay);
  }

  SUBCASE("a frame without prior has no footprint") {
    Frame f;
    f.intrinsics = aerofuse::test::test_camera();
    CHECK(code_of([&] { footprint(f, 0.0); }) == ErrorCode::MissingPrior);
  }
}

TEST_CASE("overlap ratio") {
  const GroundPolygon unit{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
  const GroundPolygon shifted{{{0.5, 0}, {1.5, 0}, {1.5, 1}, {0.5, 1}}};
  const GroundPolygon far{{{5, 5}, {6, 5}, {6, 6}, {5, 6}}};
  CHECK(overlap_ratio(unit, unit) == doctest::Approx(1.0));
  CHECK(overlap_ratio(unit, shifted) == doctest::Approx(0.5));
  CHECK(overlap_ratio(unit, far) == 0.0);
  const GroundPolygon big{{{0, 0}, {2, 0}, {2, 2}, {0, 2}}};
  CHECK(overlap_ratio(unit, big) == doctest::Approx(1.0));
  CHECK(overlap_ratio(big, unit) == doctest::Approx(0.25));
}

TEST_CASE("intrinsics validation and scaling") {
  CameraIntrinsics bad{0.0, 1.0, 0.0, 0.0, 2, 2};
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
  const CameraIntrinsics K = aerofuse::test::test_camera();
  const CameraIntrinsics half = K.scaled(0.5);
  CHECK(half.width == 600);
  CHECK(half.fx == doctest::Approx(375.0));
  const Vec3 X(2, 1, 30);
  const Vec2 full = project(K, Pose::identity(), X);
  const Vec2 small = project(half, Pose::identity(), X);
  CHECK((small - 0.5 * full).norm() < 0.5 + 1e-9);
}

}  // TEST_SUITE
