#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "aerofuse/epipolar.hpp"
#include "aerofuse/geometry.hpp"
#include "aerofuse/schur.hpp"

namespace aerofuse {

using TrackId = std::int64_t;

using TrackObservation = PixelObservation;

struct Track {
  TrackId track_id = 0;
  std::vector<TrackObservation> observations;
  bool inlier = true;
};

struct HuberTerm {
  double cost = 0.0;
  double weight = 1.0;
};

/// Huber penalty on a squared residual norm:
/// cost = r^2 for |r| <= delta, 2 delta |r| - delta^2 beyond; weight = min(1, delta/|r|).
HuberTerm huber_weight(double squared_residual, double delta);

struct BaConfig {
  double huber_delta = 1.5;         ///< pixels at working resolution
  double working_scale = 0.5;       ///< observations/intrinsics are resampled by this factor
  int feature_cap = 4000;
  int fixed_frames = 1;             ///< M: frames carried over fixed from the previous window
  double attitude_sigma = 0.01;     ///< radians, attitude part of GNSS/INS priors
  double observation_sigma_px = 1.0;  ///< full-resolution pixels, weights priors against images
  double prune_factor = 3.0;        ///< points with a residual above prune_factor * delta are dropped
  RansacConfig ransac;

  // Levenberg-Marquardt schedule.
  int max_iters = 50;
  double gradient_tol = 1e-8;
  double param_tol = 1e-10;
  double initial_lambda = 0.0;      ///< <= 0: 1e-4 x mean diagonal of H
};

struct WindowFrame {
  FrameId frame_id = 0;
  CameraIntrinsics intrinsics;  ///< full resolution
  Pose pose;                    ///< initial value
  std::optional<GnssPrior> prior;
};

/// Freezes |C(frame) - C(reference)| at its initial value; the reference must be fixed.
struct BaselineConstraint {
  FrameId reference = 0;
  FrameId frame = 0;
};

struct BaObservation {
  TrackId track_id = 0;
  FrameId frame_id = 0;
  Vec2 pixel;  ///< full resolution
};

struct BaProblem {
  std::vector<WindowFrame> frames;
  std::set<FrameId> fixed_frame_ids;
  std::optional<BaselineConstraint> baseline;
  std::map<TrackId, Vec3> points;
  std::set<TrackId> fixed_point_ids;
  std::vector<BaObservation> observations;
  double robust_delta = 1.5;
  int feature_cap = 4000;
  double working_scale = 0.5;
  double attitude_sigma = 0.01;
  double observation_sigma_px = 1.0;
  double prune_factor = 3.0;

  /// Throws InvalidArgument when observations reference unknown frames/points
  /// or the fixed set is not a subset of the window.
  void validate() const;
  const WindowFrame* frame(FrameId id) const;
};

struct TiePoint {
  Vec3 position = Vec3::Zero();
  TrackId track_id = 0;
  double uncertainty = 0.0;  ///< meters, 1-sigma
  std::vector<FrameId> observing_frames;
};

struct BaSolution {
  std::map<FrameId, Pose> poses;
  std::map<TrackId, TiePoint> points;
  std::vector<FrameId> window;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> cost_history;  ///< accepted energies, first entry is the initial cost
  int iterations = 0;
  int inlier_count = 0;      ///< observations kept after pruning
  int pruned_points = 0;
  double rms_reprojection = 0.0;  ///< full-resolution pixels over kept observations
};

struct SolveConfig {
  int max_iters = 50;
  double gradient_tol = 1e-8;
  double param_tol = 1e-10;
  double initial_lambda = 0.0;

  static SolveConfig from(const BaConfig& c) {
    return {c.max_iters, c.gradient_tol, c.param_tol, c.initial_lambda};
  }
};

/// Robust LM bundle adjustment with Schur elimination of the points.
/// Throws SingularSystem (gauge not fixed / degenerate) or Diverged.
BaSolution solve(const BaProblem& problem, const SolveConfig& config);

/// Energy of the problem at its current (initial) values.
double problem_cost(const BaProblem& problem);

struct TrackFilterResult {
  std::vector<Track> tracks;  ///< observations restricted to the window, >= 2 each
  int rejected_observations = 0;
  int checked_pairs = 0;
};

/// Pairwise RANSAC epipolar verification over the window frames. An
/// observation survives when it is consistent with at least one other
/// observation of its track; pairs without a usable model do not veto.
TrackFilterResult filter_tracks_epipolar(std::span<const Frame> window, std::span<const Track> tracks,
                                         const BaConfig& config);

/// Keeps the `cap` tracks with most observations, ties by lowest id.
std::vector<Track> apply_feature_cap(std::span<const Track> tracks, int cap);

/// Builds a BA problem for a three-frame window.
///
/// Pose seeds in priority order: frames shared with the previous solution
/// (the last M of them are fixed), GNSS priors, then relative motion from the
/// epipolar geometry scaled by already-known points, or by a unit baseline
/// when nothing fixes the scale (first GNSS-less window).
BaProblem initialize_window(std::span<const Frame> window, std::span<const Track> tracks,
                            const BaSolution* previous, const BaConfig& config);

/// One-line diagnostic record for a solved window.
std::string diagnostics_record(int cluster_id, const BaSolution& solution);

}  // namespace aerofuse
