#include "doctest.h"

#include <Eigen/Dense>

#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/error.hpp"
#include "aerofuse/rng.hpp"
#include "aerofuse/schur.hpp"
#include "aerofuse/simulator.hpp"
#include "../support/fixtures.hpp"

using namespace aerofuse;
using aerofuse::test::nadir_pose;

using aerofuse::test::DenseSystem;
using aerofuse::test::make_problem;
using aerofuse::test::perturb;
using aerofuse::test::random_system;
using aerofuse::test::stack;
using aerofuse::test::window_scene;
using aerofuse::test::WindowScene;

TEST_SUITE("schur") {

TEST_CASE("Schur solve equals the dense solve") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    DenseSystem dense;
    const int points = 10 + static_cast<int>(rng.below(91));
    const BlockSystem sys = random_system(rng, points, dense);
    const double lambda = std::pow(10.0, rng.uniform(-6, 2));
    const Eigen::MatrixXd A = dense.H + lambda * Eigen::MatrixXd::Identity(dense.H.rows(), dense.H.cols());
    const Eigen::VectorXd x = A.ldlt().solve(-dense.g);
    const Eigen::VectorXd y = stack(schur_solve(sys, lambda));
    CHECK((y - x).norm() / x.norm() < 1e-8);
  }
}

TEST_CASE("zero gradient gives a zero update") {
  Rng rng(22);
  DenseSystem dense;
  BlockSystem sys = random_system(rng, 20, dense);
  sys.camera_gradient.setZero();
  for (auto& g : sys.point_gradient) g.setZero();
  CHECK(stack(schur_solve(sys, 1e-3)).norm() == 0.0);
}

TEST_CASE("heavy damping approaches a scaled gradient step") {
  Rng rng(23);
  DenseSystem dense;
  const BlockSystem sys = random_system(rng, 30, dense);
  const double lambda = 1e9;
  const Eigen::VectorXd x = stack(schur_solve(sys, lambda));
  CHECK(x.norm() <= dense.g.norm() / lambda * (1.0 + 1e-6));
  CHECK((x + dense.g / lambda).norm() < 1e-3 * x.norm());
}

TEST_CASE("singular point block is reported") {
  BlockSystem sys = BlockSystem::zeros(6, 1);
  sys.camera_camera = Eigen::MatrixXd::Identity(6, 6);
  CHECK_THROWS_AS(schur_solve(sys, 0.0), Error);
}

}  // TEST_SUITE

TEST_SUITE("bundle_adjustment") {

TEST_CASE("Huber penalty") {
  const HuberTerm zero = huber_weight(0.0, 1.5);
  CHECK(zero.cost == 0.0);
  CHECK(zero.weight == 1.0);
  const HuberTerm knee = huber_weight(1.5 * 1.5, 1.5);
  CHECK(knee.cost == doctest::Approx(2.25));
  CHECK(knee.weight == doctest::Approx(1.0));
  const HuberTerm beyond = huber_weight(4.0, 1.0);
  CHECK(beyond.cost == doctest::Approx(3.0));
  CHECK(beyond.weight == doctest::Approx(0.5));
}

TEST_CASE("noiseless window converges to the truth") {
  const WindowScene s = window_scene(150, 0.0, 31);
  Rng rng(32);
  std::map<TrackId, Vec3> pts = s.points;
  for (auto& [id, p] : pts) p += Vec3(rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2));
  const BaProblem problem = make_problem(s, perturb(s.truth, rng), pts);
  const BaSolution sol = solve(problem, SolveConfig{100, 1e-12, 1e-14, 0.0});
  CHECK(sol.rms_reprojection < 1e-6);
  CHECK(sol.pruned_points == 0);
  CHECK(sol.final_cost < sol.initial_cost);
  for (std::size_t i = 1; i < sol.cost_history.size(); ++i) CHECK(sol.cost_history[i] < sol.cost_history[i - 1]);

  std::vector<Vec3> est, truth;
  for (int f = 0; f < 3; ++f) {
    est.push_back(sol.poses.at(f).center());
    truth.push_back(s.truth[f].center());
  }
  // The centers are collinear; the tie-points fix the roll about their line.
  for (const auto& [id, tp] : sol.points) {
    est.push_back(tp.position);
    truth.push_back(s.points.at(id));
  }
  const auto T = aerofuse::test::align(est, truth);
  for (int f = 0; f < 3; ++f) {
    CHECK((T.apply(est[f]) - truth[f]).norm() < 1e-6);
    const Mat3 R_cw = T.rotation * sol.poses.at(f).rotation.transpose();
    CHECK(aerofuse::test::rotation_angle(R_cw, s.truth[f].rotation.transpose()) < 1e-6);
  }
  CHECK((sol.poses.at(1).center() - sol.poses.at(0).center()).norm() ==
        doctest::Approx((problem.frames[1].pose.center() - problem.frames[0].pose.center()).norm()).epsilon(1e-9));
}

TEST_CASE("noisy window reaches the noise floor") {
  const WindowScene s = window_scene(200, 0.5, 41);
  Rng rng(42);
  const BaProblem problem = make_problem(s, perturb(s.truth, rng), s.points);
  const BaSolution sol = solve(problem, SolveConfig{});
  CHECK(sol.rms_reprojection <= 1.2 * 0.5);
  CHECK(sol.rms_reprojection > 0.2);
}

TEST_CASE("a problem at its optimum does not move") {
  const WindowScene s = window_scene(100, 0.0, 51);
  const BaProblem problem = make_problem(s, s.truth, s.points);
  const BaSolution sol = solve(problem, SolveConfig{});
  CHECK(sol.iterations <= 1);
  CHECK(std::abs(sol.final_cost - sol.initial_cost) <= 1e-12);
  CHECK(sol.initial_cost == doctest::Approx(problem_cost(problem)));
}

TEST_CASE("fixed frames come back unchanged") {
  const WindowScene s = window_scene(100, 0.3, 55);
  Rng rng(56);
  const BaProblem problem = make_problem(s, perturb(s.truth, rng), s.points);
  const BaSolution sol = solve(problem, SolveConfig{});
  CHECK(sol.poses.at(0).rotation == problem.frames[0].pose.rotation);
  CHECK(sol.poses.at(0).translation == problem.frames[0].pose.translation);
}

TEST_CASE("an unfixed gauge is singular") {
  const WindowScene s = window_scene(60, 0.0, 61);
  BaProblem problem = make_problem(s, s.truth, s.points);
  problem.fixed_frame_ids.clear();
  problem.baseline.reset();
  try {
    solve(problem, SolveConfig{});
    FAIL("expected SingularSystem");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularSystem);
  }
}

TEST_CASE("gross outliers are pruned") {
  WindowScene s = window_scene(150, 0.3, 65);
  for (std::size_t i = 0; i < 30; i += 3) s.observations[i].pixel += Vec2(40, -25);
  Rng rng(66);
  const BaSolution sol = solve(make_problem(s, s.truth, s.points), SolveConfig{});
  CHECK(sol.pruned_points == 10);
  CHECK(sol.rms_reprojection < 0.6);
  for (TrackId id = 0; id < 10; ++id) CHECK(sol.points.count(id) == 0);
}

TEST_CASE("invalid problems are rejected") {
  const WindowScene s = window_scene(20, 0.0, 71);
  BaProblem problem = make_problem(s, s.truth, s.points);
  problem.fixed_frame_ids = {7};
  CHECK_THROWS_AS(problem.validate(), Error);
  problem = make_problem(s, s.truth, s.points);
  problem.observations.push_back({999, 0, Vec2(1, 1)});
  CHECK_THROWS_AS(problem.validate(), Error);
}

TEST_CASE("feature cap keeps the longest tracks") {
  std::vector<Track> tracks;
  for (TrackId id = 0; id < 6000; ++id) {
    Track t;
    t.track_id = id;
    const int n = id % 3 == 0 ? 3 : 2;
    for (int f = 0; f < n; ++f) t.observations.push_back({f, Vec2(1, 1)});
    tracks.push_back(t);
  }
  const auto kept = apply_feature_cap(tracks, 4000);
  CHECK(kept.size() == 4000);
  int three = 0;
  for (const auto& t : kept) three += t.observations.size() == 3;
  CHECK(three == 2000);
  CHECK(apply_feature_cap(tracks, 10000).size() == 6000);
}

TEST_CASE("window initialization") {
  sim::SceneConfig sc;
  sc.features = 6000;
  const auto scene = sim::generate_scene(3, sc);

  SUBCASE("first window without GNSS uses the canonical gauge") {
    sim::MissionPlan plan;
    plan.frames_per_strip = 6;
    plan.dropout = 1.0;
    const auto mission = sim::generate_mission(scene, plan, 3);
    sim::TrackConfig tc;
    tc.features = 6000;
    tc.include_markers = false;
    const auto ts = sim::render_tracks(scene, mission, tc, 3);
    const std::span<const Frame> window(mission.frames.data(), 3);
    BaConfig config;
    const auto filtered = filter_tracks_epipolar(window, ts.tracks, config);
    const BaProblem p = initialize_window(window, filtered.tracks, nullptr, config);
    CHECK(p.fixed_frame_ids == std::set<FrameId>{0});
    CHECK(p.frames[0].pose.rotation.isApprox(Mat3::Identity()));
    CHECK(p.frames[0].pose.translation.norm() == 0.0);
    REQUIRE(p.baseline.has_value());
    CHECK(p.baseline->reference == 0);
    CHECK(p.baseline->frame == 1);
    CHECK((p.frames[1].pose.center() - p.frames[0].pose.center()).norm() == doctest::Approx(1.0));
    CHECK(static_cast<int>(p.points.size()) <= config.feature_cap);
    const BaSolution sol = solve(p, SolveConfig::from(config));
    CHECK(sol.rms_reprojection < 0.6);
  }

  SUBCASE("the next window inherits the shared frame") {
    sim::MissionPlan plan;
    plan.frames_per_strip = 6;
    const auto mission = sim::generate_mission(scene, plan, 4);
    sim::TrackConfig tc;
    tc.features = 6000;
    tc.include_markers = false;
    const auto ts = sim::render_tracks(scene, mission, tc, 4);
    BaConfig config;
    const std::span<const Frame> first(mission.frames.data(), 3);
    const auto f1 = filter_tracks_epipolar(first, ts.tracks, config);
    const BaSolution s1 = solve(initialize_window(first, f1.tracks, nullptr, config), SolveConfig::from(config));
    const std::span<const Frame> second(mission.frames.data() + 2, 3);
    const auto f2 = filter_tracks_epipolar(second, ts.tracks, config);
    const BaProblem p2 = initialize_window(second, f2.tracks, &s1, config);
    CHECK(p2.fixed_frame_ids.count(2) == 1);
    const WindowFrame* shared = p2.frame(2);
    REQUIRE(shared != nullptr);
    CHECK(shared->pose.rotation == s1.poses.at(2).rotation);
    CHECK(shared->pose.translation == s1.poses.at(2).translation);
    const BaSolution s2 = solve(p2, SolveConfig::from(config));
    CHECK(s2.rms_reprojection < 0.6);
    for (int f = 2; f < 5; ++f)
      CHECK((s2.poses.at(f).center() - mission.truth[static_cast<std::size_t>(f)].center()).norm() < 0.3);
  }
}

TEST_CASE("diagnostics record") {
  BaSolution s;
  s.iterations = 4;
  s.rms_reprojection = 0.25;
  const std::string line = diagnostics_record(3, s);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("3") != std::string::npos);
}

}  // TEST_SUITE
