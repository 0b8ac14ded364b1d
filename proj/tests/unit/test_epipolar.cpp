#include "doctest.h"

#include <set>

#include "aerofuse/epipolar.hpp"
#include "aerofuse/error.hpp"
#include "aerofuse/rng.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;
using aerofuse::test::angle_between;
using aerofuse::test::rotation_angle;

namespace {

struct PairScene {
  CameraIntrinsics K = aerofuse::test::test_camera();
  Pose a;
  Pose b;
  std::vector<Correspondence> matches;
  std::set<std::size_t> outliers;

  RelativePose truth() const {
    RelativePose r;
    r.rotation = b.rotation * a.rotation.transpose();
    r.translation_direction = (b.translation - r.rotation * a.translation).normalized();
    return r;
  }
};

PairScene make_pair_scene(int n, double outlier_fraction, std::uint64_t seed) {
  PairScene s;
  s.a = aerofuse::test::nadir_pose(Vec3(0, 0, 50));
  s.b = Pose::from_center(so3::exp(Vec3(0.02, -0.03, 0.05)) * aerofuse::test::nadir(), Vec3(12, 3, 51));
  Rng rng(seed);
  while (static_cast<int>(s.matches.size()) < n) {
    const Vec3 P(rng.uniform(-10, 25), rng.uniform(-15, 15), rng.uniform(-15, 15));
    const Vec2 pa = project(s.K, s.a, P);
    const Vec2 pb = project(s.K, s.b, P);
    auto inside = [&](const Vec2& p) { return p.x() >= 0 && p.y() >= 0 && p.x() < s.K.width && p.y() < s.K.height; };
    if (!inside(pa) || !inside(pb)) continue;
    s.matches.push_back({pa, pb});
  }
  for (std::size_t i = 0; i < s.matches.size(); ++i) {
    if (!rng.bernoulli(outlier_fraction)) continue;
    s.matches[i].b = Vec2(rng.uniform(0, s.K.width), rng.uniform(0, s.K.height));
    s.outliers.insert(i);
  }
  return s;
}

}  // namespace

TEST_SUITE("epipolar") {

TEST_CASE("noiseless correspondences recover the relative pose") {
  const PairScene s = make_pair_scene(200, 0.0, 1);
  const EpipolarResult r = ransac_epipolar_filter(s.matches, s.K, s.K, RansacConfig{});
  CHECK(r.inlier_count == 200);
  const RelativePose t = s.truth();
  CHECK(rotation_angle(r.pose.rotation, t.rotation) < 1e-4);
  CHECK(angle_between(r.pose.translation_direction, t.translation_direction) < 1e-4);
}

TEST_CASE("outliers are rejected") {
  const PairScene s = make_pair_scene(300, 0.30, 2);
  const EpipolarResult r = ransac_epipolar_filter(s.matches, s.K, s.K, RansacConfig{});
  const RelativePose t = s.truth();
  const Mat3 F_true = fundamental_from_essential(so3::skew(t.translation_direction) * t.rotation, s.K, s.K);
  int kept_true = 0;
  int kept_false = 0;
  for (std::size_t i = 0; i < s.matches.size(); ++i) {
    if (!r.inliers[i]) continue;
    if (!s.outliers.count(i)) {
      ++kept_true;
    } else if (symmetric_epipolar_distance(F_true, s.matches[i].a, s.matches[i].b) > 1.0) {
      // Random pixels that land on their true epipolar line carry no error and may stay.
      ++kept_false;
    }
  }
  const int true_inliers = static_cast<int>(s.matches.size() - s.outliers.size());
  CHECK(kept_true >= 0.99 * true_inliers);
  CHECK(kept_false == 0);
}

TEST_CASE("too few correspondences") {
  const PairScene s = make_pair_scene(7, 0.0, 4);
  try {
    ransac_epipolar_filter(s.matches, s.K, s.K, RansacConfig{});
    FAIL("expected TooFewCorrespondences");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewCorrespondences);
  }
}

TEST_CASE("pure noise has no consensus") {
  Rng rng(8);
  const CameraIntrinsics K = aerofuse::test::test_camera();
  std::vector<Correspondence> m;
  for (int i = 0; i < 200; ++i)
    m.push_back({Vec2(rng.uniform(0, 1200), rng.uniform(0, 800)), Vec2(rng.uniform(0, 1200), rng.uniform(0, 800))});
  try {
    ransac_epipolar_filter(m, K, K, RansacConfig{});
    FAIL("expected NoConsensus");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoConsensus);
  }
}

TEST_CASE("deterministic for a seed") {
  const PairScene s = make_pair_scene(150, 0.2, 5);
  const auto r1 = ransac_epipolar_filter(s.matches, s.K, s.K, RansacConfig{});
  const auto r2 = ransac_epipolar_filter(s.matches, s.K, s.K, RansacConfig{});
  CHECK(r1.inliers == r2.inliers);
  CHECK((r1.essential - r2.essential).norm() == 0.0);
}

TEST_CASE("eight-point and homography estimators") {
  const PairScene s = make_pair_scene(50, 0.0, 6);
  std::vector<Vec3> na, nb;
  for (const auto& m : s.matches) {
    na.push_back(s.K.unproject(m.a));
    nb.push_back(s.K.unproject(m.b));
  }
  const Mat3 E = essential_eight_point(na, nb);
  for (std::size_t i = 0; i < na.size(); ++i) CHECK(std::abs(nb[i].dot(E * na[i])) < 1e-8);
  const RelativePose rp = decompose_essential(E, na, nb);
  CHECK(rotation_angle(rp.rotation, s.truth().rotation) < 1e-6);

  // Homography of the plane z = 0 seen by both cameras.
  Rng rng(9);
  std::vector<Vec3> pa, pb;
  for (int i = 0; i < 20; ++i) {
    const Vec3 P(rng.uniform(-10, 20), rng.uniform(-10, 10), 0.0);
    pa.push_back(s.a.transform(P).normalized());
    pb.push_back(s.b.transform(P).normalized());
  }
  const Mat3 H = homography_four_point(pa, pb);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Vec3 q = H * pa[i];
    CHECK((q / q.z() - pb[i] / pb[i].z()).norm() < 1e-9);
  }
}

}  // TEST_SUITE
