#include "aerofuse/bundle_adjustment.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "aerofuse/error.hpp"

namespace aerofuse {

HuberTerm huber_weight(double squared_residual, double delta) {
  const double r = std::sqrt(std::max(0.0, squared_residual));
  if (r <= delta) return {squared_residual, 1.0};
  return {2.0 * delta * r - delta * delta, delta / r};
}

const WindowFrame* BaProblem::frame(FrameId id) const {
  for (const auto& f : frames)
    if (f.frame_id == id) return &f;
  return nullptr;
}

void BaProblem::validate() const {
  if (frames.size() < 2) throw Error(ErrorCode::InvalidArgument, "a window needs at least two frames");
  std::set<FrameId> ids;
  for (const auto& f : frames) {
    f.intrinsics.validate();
    if (!ids.insert(f.frame_id).second)
      throw Error(ErrorCode::InvalidArgument, "duplicate frame " + std::to_string(f.frame_id));
  }
  for (FrameId id : fixed_frame_ids)
    if (!ids.count(id))
      throw Error(ErrorCode::InvalidArgument, "fixed frame " + std::to_string(id) + " is not in the window");
  if (baseline) {
    if (!fixed_frame_ids.count(baseline->reference) || !ids.count(baseline->frame) ||
        fixed_frame_ids.count(baseline->frame) || baseline->frame == baseline->reference)
      throw Error(ErrorCode::InvalidArgument, "baseline constraint needs a fixed reference and a free frame");
  }
  for (TrackId id : fixed_point_ids)
    if (!points.count(id))
      throw Error(ErrorCode::InvalidArgument, "fixed point " + std::to_string(id) + " does not exist");
  if (!(robust_delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "robust delta must be positive");
  if (!(working_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "working scale must be positive");
  if (!(observation_sigma_px > 0.0) || !(attitude_sigma > 0.0))
    throw Error(ErrorCode::InvalidArgument, "sigmas must be positive");

  std::map<TrackId, std::set<FrameId>> seen;
  for (const auto& o : observations) {
    if (!ids.count(o.frame_id))
      throw Error(ErrorCode::InvalidArgument, "observation references unknown frame " + std::to_string(o.frame_id));
    if (!points.count(o.track_id))
      throw Error(ErrorCode::InvalidArgument, "observation references unknown point " + std::to_string(o.track_id));
    if (!seen[o.track_id].insert(o.frame_id).second)
      throw Error(ErrorCode::InvalidArgument, "track " + std::to_string(o.track_id) + " observed twice in a frame");
  }
  for (const auto& [id, p] : points) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite point " + std::to_string(id));
    if (!fixed_point_ids.count(id) && seen[id].size() < 2)
      throw Error(ErrorCode::InvalidArgument, "point " + std::to_string(id) + " has fewer than two views");
  }
}

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat26 = Eigen::Matrix<double, 2, 6>;

struct Obs {
  int frame = 0;  // index into frames
  Vec2 pixel;     // working resolution
};

struct PointSlot {
  TrackId id = 0;
  bool fixed = false;
  int free_index = -1;
  std::vector<Obs> obs;
};

struct FrameSlot {
  FrameId id = 0;
  CameraIntrinsics K;  // working resolution
  std::optional<GnssPrior> prior;
  int offset = -1;     // -1: fixed
  int dim = 0;         // 6, or 5 for the baseline-constrained frame
};

struct State {
  std::vector<Pose> poses;
  std::vector<Vec3> points;
};

class Model {
 public:
  explicit Model(const BaProblem& p) : problem_(p) {
    delta_ = p.robust_delta;
    sigma_w_ = p.observation_sigma_px * p.working_scale;
    std::map<FrameId, int> index;
    for (const auto& f : p.frames) {
      FrameSlot s;
      s.id = f.frame_id;
      s.K = f.intrinsics.scaled(p.working_scale);
      s.prior = f.prior;
      index[f.frame_id] = static_cast<int>(frames_.size());
      frames_.push_back(s);
      initial_.poses.push_back(f.pose);
    }
    if (p.baseline) {
      baseline_frame_ = index.at(p.baseline->frame);
      baseline_ref_ = index.at(p.baseline->reference);
      baseline_length_ = (initial_.poses[baseline_frame_].center() - initial_.poses[baseline_ref_].center()).norm();
      if (!(baseline_length_ > 0.0))
        throw Error(ErrorCode::DegenerateGeometry, "baseline constraint with zero initial length");
    }
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      if (p.fixed_frame_ids.count(frames_[i].id)) continue;
      frames_[i].offset = camera_dim_;
      frames_[i].dim = static_cast<int>(i) == baseline_frame_ ? 5 : 6;
      camera_dim_ += frames_[i].dim;
    }

    std::map<TrackId, int> pindex;
    for (const auto& [id, pos] : p.points) {
      PointSlot s;
      s.id = id;
      s.fixed = p.fixed_point_ids.count(id) > 0;
      if (!s.fixed) s.free_index = free_points_++;
      pindex[id] = static_cast<int>(points_.size());
      points_.push_back(std::move(s));
      initial_.points.push_back(pos);
    }
    for (const auto& o : p.observations)
      points_[pindex.at(o.track_id)].obs.push_back({index.at(o.frame_id), o.pixel * p.working_scale});
  }

  const State& initial() const { return initial_; }
  Eigen::Index camera_dim() const { return camera_dim_; }
  int free_points() const { return free_points_; }
  const std::vector<PointSlot>& points() const { return points_; }
  const std::vector<FrameSlot>& frames() const { return frames_; }
  double delta() const { return delta_; }
  double sigma_w() const { return sigma_w_; }

  double cost(const State& s) const {
    double e = 0.0;
    for (std::size_t j = 0; j < points_.size(); ++j) {
      for (const auto& o : points_[j].obs) {
        const Pose& pose = s.poses[o.frame];
        const Vec3 X = pose.transform(s.points[j]);
        if (!(X.z() > 0.0)) return std::numeric_limits<double>::infinity();
        const auto& K = frames_[o.frame].K;
        const Vec2 r(K.fx * X.x() / X.z() + K.cx - o.pixel.x(), K.fy * X.y() / X.z() + K.cy - o.pixel.y());
        e += huber_weight(r.squaredNorm(), delta_).cost;
      }
    }
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      if (frames_[i].offset < 0 || !frames_[i].prior) continue;
      e += prior_residual(i, s.poses[i]).squaredNorm();
    }
    return e;
  }

  BlockSystem linearize(const State& s) const {
    BlockSystem sys = BlockSystem::zeros(camera_dim_, static_cast<std::size_t>(free_points_));
    for (std::size_t j = 0; j < points_.size(); ++j) {
      const PointSlot& pt = points_[j];
      for (const auto& o : pt.obs) {
        const FrameSlot& fs = frames_[o.frame];
        const ReprojectionResidual rr = reprojection_residual(o.pixel, fs.K, s.poses[o.frame], s.points[j]);
        const double w = huber_weight(rr.residual.squaredNorm(), delta_).weight;
        Eigen::Matrix<double, 2, Eigen::Dynamic> Jc;
        if (fs.offset >= 0) {
          Jc = rr.d_pose * lift(o.frame, s.poses[o.frame]);
          sys.camera_camera.block(fs.offset, fs.offset, fs.dim, fs.dim).noalias() += w * Jc.transpose() * Jc;
          sys.camera_gradient.segment(fs.offset, fs.dim).noalias() += w * Jc.transpose() * rr.residual;
        }
        if (pt.fixed) continue;
        const auto k = static_cast<std::size_t>(pt.free_index);
        sys.point_point[k].noalias() += w * rr.d_point.transpose() * rr.d_point;
        sys.point_gradient[k].noalias() += w * rr.d_point.transpose() * rr.residual;
        if (fs.offset >= 0)
          sys.camera_point[k].middleRows(fs.offset, fs.dim).noalias() += w * Jc.transpose() * rr.d_point;
      }
    }
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      const FrameSlot& fs = frames_[i];
      if (fs.offset < 0 || !fs.prior) continue;
      const Eigen::Matrix<double, 6, 1> r = prior_residual(i, s.poses[i]);
      const Eigen::Matrix<double, 6, Eigen::Dynamic> J = prior_jacobian(i, s.poses[i]) * lift(i, s.poses[i]);
      sys.camera_camera.block(fs.offset, fs.offset, fs.dim, fs.dim).noalias() += J.transpose() * J;
      sys.camera_gradient.segment(fs.offset, fs.dim).noalias() += J.transpose() * r;
    }
    return sys;
  }

  State apply(const State& s, const SchurStep& step) const {
    State out = s;
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      const FrameSlot& fs = frames_[i];
      if (fs.offset < 0) continue;
      const Vec6 d = lift(i, s.poses[i]) * step.camera.segment(fs.offset, fs.dim);
      out.poses[i] = s.poses[i].perturbed(d);
      if (static_cast<int>(i) == baseline_frame_) {
        const Vec3 ref = out.poses[baseline_ref_].center();
        const Vec3 c = ref + baseline_length_ * (out.poses[i].center() - ref).normalized();
        out.poses[i].translation = -out.poses[i].rotation * c;
      }
    }
    for (std::size_t j = 0; j < points_.size(); ++j)
      if (!points_[j].fixed) out.points[j] += step.points[static_cast<std::size_t>(points_[j].free_index)];
    return out;
  }

  double state_norm(const State& s) const {
    double n = 0.0;
    for (std::size_t i = 0; i < frames_.size(); ++i)
      if (frames_[i].offset >= 0) n += s.poses[i].translation.squaredNorm();
    for (std::size_t j = 0; j < points_.size(); ++j)
      if (!points_[j].fixed) n += s.points[j].squaredNorm();
    return std::sqrt(n);
  }

 private:
  // Maps the frame's local parameters to the 6-vector of Pose::perturbed.
  Eigen::Matrix<double, 6, Eigen::Dynamic> lift(std::size_t i, const Pose& pose) const {
    if (static_cast<int>(i) != baseline_frame_) return Eigen::Matrix<double, 6, 6>::Identity();
    // Tangent basis of the sphere around the reference centre.
    const Vec3 u = (pose.center() - current_ref_center(pose)).normalized();
    const Vec3 helper = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Eigen::Matrix<double, 3, 2> B;
    B.col(0) = u.cross(helper).normalized();
    B.col(1) = u.cross(B.col(0));
    Eigen::Matrix<double, 6, 5> M = Eigen::Matrix<double, 6, 5>::Zero();
    M.topLeftCorner<3, 3>().setIdentity();
    M.bottomRightCorner<3, 2>() = -pose.rotation * B;
    return M;
  }

  Vec3 current_ref_center(const Pose&) const {
    // The reference frame is fixed, so its centre never moves.
    return initial_.poses[baseline_ref_].center();
  }

  Eigen::Matrix<double, 6, 1> prior_residual(std::size_t i, const Pose& pose) const {
    const GnssPrior& pr = *frames_[i].prior;
    Eigen::Matrix<double, 6, 1> r;
    r.head<3>() = (sigma_w_ / problem_.attitude_sigma) * so3::log(pose.rotation * pr.pose.rotation.transpose());
    r.tail<3>() = (sigma_w_ / pr.position_sigma) * (pose.center() - pr.pose.center());
    return r;
  }

  Eigen::Matrix<double, 6, 6> prior_jacobian(std::size_t i, const Pose& pose) const {
    const GnssPrior& pr = *frames_[i].prior;
    const Vec3 phi = so3::log(pose.rotation * pr.pose.rotation.transpose());
    Eigen::Matrix<double, 6, 6> J = Eigen::Matrix<double, 6, 6>::Zero();
    J.topLeftCorner<3, 3>() = (sigma_w_ / problem_.attitude_sigma) * so3::left_jacobian_inverse(phi);
    J.bottomRightCorner<3, 3>() = -(sigma_w_ / pr.position_sigma) * pose.rotation.transpose();
    return J;
  }

  const BaProblem& problem_;
  std::vector<FrameSlot> frames_;
  std::vector<PointSlot> points_;
  State initial_;
  Eigen::Index camera_dim_ = 0;
  int free_points_ = 0;
  int baseline_frame_ = -1;
  int baseline_ref_ = -1;
  double baseline_length_ = 0.0;
  double delta_ = 1.5;
  double sigma_w_ = 0.5;
};

double gradient_inf_norm(const BlockSystem& sys) {
  double g = sys.camera_gradient.size() ? sys.camera_gradient.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& gp : sys.point_gradient) g = std::max(g, gp.cwiseAbs().maxCoeff());
  return g;
}

double step_norm(const SchurStep& step) {
  double n = step.camera.squaredNorm();
  for (const auto& p : step.points) n += p.squaredNorm();
  return std::sqrt(n);
}

double mean_diagonal(const BlockSystem& sys) {
  double sum = sys.camera_camera.diagonal().sum();
  for (const auto& v : sys.point_point) sum += v.trace();
  const auto n = static_cast<double>(sys.camera_dim()) + 3.0 * static_cast<double>(sys.point_count());
  return n > 0.0 ? sum / n : 0.0;
}

void check_rank(const BlockSystem& sys) {
  if (sys.camera_dim() == 0) return;
  const Eigen::MatrixXd S = reduced_camera_matrix(sys, 0.0);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(hi > 0.0) || lo / hi <= 1e-12)
    throw Error(ErrorCode::SingularSystem, "reduced camera system is rank deficient (gauge not fixed or degenerate geometry)");
}

}  // namespace

double problem_cost(const BaProblem& problem) {
  problem.validate();
  const Model model(problem);
  return model.cost(model.initial());
}

BaSolution solve(const BaProblem& problem, const SolveConfig& config) {
  problem.validate();
  if (config.max_iters < 0 || !(config.gradient_tol >= 0.0) || !(config.param_tol >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "invalid solver tolerances");
  const Model model(problem);
  State state = model.initial();
  double cost = model.cost(state);
  if (!std::isfinite(cost))
    throw Error(ErrorCode::NonPositiveDepth, "initial point lies behind an observing camera");

  BaSolution sol;
  sol.initial_cost = cost;
  sol.cost_history.push_back(cost);

  BlockSystem sys = model.linearize(state);
  check_rank(sys);
  double lambda = config.initial_lambda > 0.0 ? config.initial_lambda : 1e-4 * mean_diagonal(sys);
  if (!(lambda > 0.0)) lambda = 1e-4;
  bool accepted_any = false;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    if (gradient_inf_norm(sys) < config.gradient_tol) break;
    SchurStep step;
    try {
      step = schur_solve(sys, lambda);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularSystem) throw;
      lambda *= 4.0;
      if (lambda > 1e12 && !accepted_any) throw Error(ErrorCode::Diverged, "damping exceeded 1e12");
      continue;
    }
    const double xnorm = model.state_norm(state);
    if (step_norm(step) < config.param_tol * (xnorm + config.param_tol)) break;

    ++sol.iterations;
    State trial = model.apply(state, step);
    const double trial_cost = model.cost(trial);
    if (trial_cost < cost) {
      state = std::move(trial);
      cost = trial_cost;
      sol.cost_history.push_back(cost);
      lambda *= 0.5;
      accepted_any = true;
      sys = model.linearize(state);
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) {
        if (!accepted_any) throw Error(ErrorCode::Diverged, "damping exceeded 1e12 without an accepted step");
        break;
      }
    }
  }
  sol.final_cost = cost;

  // Prune points that still disagree with their observations.
  const auto& pts = model.points();
  const auto& frames = model.frames();
  const double limit = problem.prune_factor * model.delta();
  std::vector<bool> keep(pts.size(), true);
  double sq_sum = 0.0;
  long kept_obs = 0;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    double local = 0.0;
    for (const auto& o : pts[j].obs) {
      const Vec3 X = state.poses[o.frame].transform(state.points[j]);
      if (!(X.z() > 0.0)) {
        keep[j] = false;
        break;
      }
      const auto& K = frames[o.frame].K;
      const Vec2 r(K.fx * X.x() / X.z() + K.cx - o.pixel.x(), K.fy * X.y() / X.z() + K.cy - o.pixel.y());
      if (r.norm() > limit) {
        keep[j] = false;
        break;
      }
      local += r.squaredNorm();
    }
    if (!keep[j]) {
      ++sol.pruned_points;
      continue;
    }
    sq_sum += local;
    kept_obs += static_cast<long>(pts[j].obs.size());
  }
  sol.inlier_count = static_cast<int>(kept_obs);
  sol.rms_reprojection = kept_obs > 0 ? std::sqrt(sq_sum / (2.0 * static_cast<double>(kept_obs))) / problem.working_scale : 0.0;

  for (std::size_t i = 0; i < frames.size(); ++i) {
    sol.window.push_back(frames[i].id);
    // Fixed frames are returned bit-identical to their input.
    sol.poses[frames[i].id] = frames[i].offset < 0 ? problem.frames[i].pose : state.poses[i];
  }

  // First-order covariance of the retained points at the solution.
  const BlockSystem final_sys = model.linearize(state);
  Eigen::LLT<Eigen::MatrixXd> reduced;
  bool have_reduced = false;
  if (final_sys.camera_dim() > 0) {
    try {
      reduced.compute(reduced_camera_matrix(final_sys, 0.0));
      have_reduced = reduced.info() == Eigen::Success;
    } catch (const Error&) {
      have_reduced = false;
    }
  }
  const double var_w = model.sigma_w() * model.sigma_w();
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (!keep[j]) continue;
    TiePoint tp;
    tp.track_id = pts[j].id;
    tp.position = state.points[j];
    for (const auto& o : pts[j].obs) tp.observing_frames.push_back(frames[o.frame].id);

    Eigen::Matrix3d V;
    Eigen::MatrixXd W;
    if (pts[j].fixed) {
      V.setZero();
      for (const auto& o : pts[j].obs) {
        const auto rr = reprojection_residual(o.pixel, frames[o.frame].K, state.poses[o.frame], state.points[j]);
        V.noalias() += huber_weight(rr.residual.squaredNorm(), model.delta()).weight * rr.d_point.transpose() * rr.d_point;
      }
    } else {
      const auto k = static_cast<std::size_t>(pts[j].free_index);
      V = final_sys.point_point[k];
      W = final_sys.camera_point[k];
    }
    const Eigen::Matrix3d Vinv = V.ldlt().solve(Eigen::Matrix3d::Identity());
    Eigen::Matrix3d cov = Vinv;
    if (have_reduced && W.size() > 0 && !pts[j].fixed) {
      const Eigen::MatrixXd WVinv = W * Vinv;
      cov.noalias() += WVinv.transpose() * reduced.solve(WVinv);
    }
    const double tr = (var_w * cov).trace();
    tp.uncertainty = std::isfinite(tr) && tr > 0.0 ? std::sqrt(tr / 3.0) : std::numeric_limits<double>::max();
    sol.points.emplace(tp.track_id, std::move(tp));
  }
  return sol;
}

std::vector<Track> apply_feature_cap(std::span<const Track> tracks, int cap) {
  std::vector<Track> out(tracks.begin(), tracks.end());
  if (cap < 0) throw Error(ErrorCode::InvalidArgument, "feature cap must be non-negative");
  if (out.size() <= static_cast<std::size_t>(cap)) return out;
  std::stable_sort(out.begin(), out.end(), [](const Track& a, const Track& b) {
    if (a.observations.size() != b.observations.size()) return a.observations.size() > b.observations.size();
    return a.track_id < b.track_id;
  });
  out.resize(static_cast<std::size_t>(cap));
  std::sort(out.begin(), out.end(), [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

namespace {

// Observations of `tracks` restricted to `window`, one per frame, tracks with
// fewer than two remaining views dropped.
std::vector<Track> restrict_to_window(std::span<const Frame> window, std::span<const Track> tracks) {
  std::set<FrameId> ids;
  for (const auto& f : window) ids.insert(f.frame_id);
  std::vector<Track> out;
  for (const auto& t : tracks) {
    Track r;
    r.track_id = t.track_id;
    r.inlier = t.inlier;
    std::set<FrameId> seen;
    for (const auto& o : t.observations)
      if (ids.count(o.frame_id) && seen.insert(o.frame_id).second) r.observations.push_back(o);
    if (r.observations.size() >= 2) out.push_back(std::move(r));
  }
  return out;
}

const TrackObservation* find_obs(const Track& t, FrameId id) {
  for (const auto& o : t.observations)
    if (o.frame_id == id) return &o;
  return nullptr;
}

struct PairMatch {
  std::vector<std::size_t> track_index;
  std::vector<Correspondence> corr;  // working resolution
};

PairMatch pair_matches(const std::vector<Track>& tracks, FrameId a, FrameId b, double scale) {
  PairMatch m;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto* oa = find_obs(tracks[i], a);
    const auto* ob = find_obs(tracks[i], b);
    if (!oa || !ob) continue;
    m.track_index.push_back(i);
    m.corr.push_back({oa->pixel * scale, ob->pixel * scale});
  }
  return m;
}

RansacConfig pair_ransac(const BaConfig& config, std::size_t a, std::size_t b) {
  RansacConfig rc = config.ransac;
  rc.seed = config.ransac.seed + 1000003ULL * a + b;
  return rc;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

}  // namespace

TrackFilterResult filter_tracks_epipolar(std::span<const Frame> window, std::span<const Track> tracks,
                                         const BaConfig& config) {
  TrackFilterResult result;
  std::vector<Track> local = restrict_to_window(window, tracks);
  // pass[track][frame index]: 0 unchecked, 1 passed, 2 failed every checked pair.
  std::vector<std::vector<int>> verdict(local.size(), std::vector<int>(window.size(), 0));
  for (std::size_t a = 0; a < window.size(); ++a) {
    for (std::size_t b = a + 1; b < window.size(); ++b) {
      const PairMatch m = pair_matches(local, window[a].frame_id, window[b].frame_id, config.working_scale);
      if (m.corr.empty()) continue;
      std::optional<EpipolarResult> er;
      try {
        er = ransac_epipolar_filter(m.corr, window[a].intrinsics.scaled(config.working_scale),
                                    window[b].intrinsics.scaled(config.working_scale), pair_ransac(config, a, b));
        ++result.checked_pairs;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TooFewCorrespondences && e.code() != ErrorCode::NoConsensus) throw;
      }
      for (std::size_t k = 0; k < m.track_index.size(); ++k) {
        const bool pass = !er || er->inliers[k];
        for (std::size_t f : {a, b}) {
          int& v = verdict[m.track_index[k]][f];
          v = pass ? 1 : (v == 1 ? 1 : 2);
        }
      }
    }
  }
  for (std::size_t i = 0; i < local.size(); ++i) {
    Track t;
    t.track_id = local[i].track_id;
    for (const auto& o : local[i].observations) {
      std::size_t f = 0;
      while (window[f].frame_id != o.frame_id) ++f;
      if (verdict[i][f] == 1) t.observations.push_back(o);
      else ++result.rejected_observations;
    }
    if (t.observations.size() >= 2) result.tracks.push_back(std::move(t));
  }
  return result;
}

BaProblem initialize_window(std::span<const Frame> window, std::span<const Track> tracks,
                            const BaSolution* previous, const BaConfig& config) {
  if (window.size() < 2) throw Error(ErrorCode::InvalidArgument, "a window needs at least two frames");
  const std::vector<Track> local = apply_feature_cap(restrict_to_window(window, tracks), config.feature_cap);

  BaProblem problem;
  problem.robust_delta = config.huber_delta;
  problem.feature_cap = config.feature_cap;
  problem.working_scale = config.working_scale;
  problem.attitude_sigma = config.attitude_sigma;
  problem.observation_sigma_px = config.observation_sigma_px;
  problem.prune_factor = config.prune_factor;

  const std::size_t n = window.size();
  std::vector<std::optional<Pose>> seed(n);

  // 1. Frames shared with the previous window; the last M of them stay fixed.
  if (previous) {
    std::vector<std::pair<std::size_t, std::size_t>> shared;  // (order in previous window, window index)
    for (std::size_t i = 0; i < n; ++i) {
      auto it = previous->poses.find(window[i].frame_id);
      if (it == previous->poses.end()) continue;
      seed[i] = it->second;
      const auto pos = std::find(previous->window.begin(), previous->window.end(), window[i].frame_id);
      shared.emplace_back(static_cast<std::size_t>(pos - previous->window.begin()), i);
    }
    std::sort(shared.begin(), shared.end());
    const std::size_t m = std::min<std::size_t>(shared.size(), static_cast<std::size_t>(std::max(0, config.fixed_frames)));
    for (std::size_t k = shared.size() - m; k < shared.size(); ++k)
      problem.fixed_frame_ids.insert(window[shared[k].second].frame_id);
  }

  // 2. GNSS priors.
  bool any_prior = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!window[i].gnss_prior) continue;
    any_prior = true;
    if (!seed[i]) seed[i] = window[i].gnss_prior->pose;
  }

  // Canonical gauge when nothing anchors the window.
  bool canonical = false;
  if (std::none_of(seed.begin(), seed.end(), [](const auto& s) { return s.has_value(); })) {
    if (previous) throw Error(ErrorCode::DisconnectedCluster, "window shares no frame with the previous solution and has no GNSS");
    seed[0] = Pose::identity();
    problem.fixed_frame_ids.insert(window[0].frame_id);
    canonical = true;
  }

  // 3. Relative motion from the nearest seeded frame.
  std::map<FrameId, CameraIntrinsics> intrinsics;
  for (const auto& f : window) intrinsics[f.frame_id] = f.intrinsics;
  auto known_points = [&]() {
    std::map<TrackId, Vec3> pts;
    if (previous)
      for (const auto& [id, tp] : previous->points) pts[id] = tp.position;
    std::map<FrameId, Pose> poses;
    for (std::size_t i = 0; i < n; ++i)
      if (seed[i]) poses[window[i].frame_id] = *seed[i];
    if (poses.size() < 2) return pts;
    for (const auto& t : local) {
      if (pts.count(t.track_id)) continue;
      try {
        pts[t.track_id] = triangulate(t.observations, poses, intrinsics);
      } catch (const Error&) {
      }
    }
    return pts;
  };

  for (;;) {
    std::size_t target = n;
    std::size_t source = n;
    std::size_t best = n + 1;
    for (std::size_t u = 0; u < n; ++u) {
      if (seed[u]) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (!seed[k]) continue;
        const std::size_t d = u > k ? u - k : k - u;
        if (d < best) {
          best = d;
          target = u;
          source = k;
        }
      }
    }
    if (target == n) break;

    const Frame& fa = window[source];
    const Frame& fb = window[target];
    const PairMatch m = pair_matches(local, fa.frame_id, fb.frame_id, config.working_scale);
    const CameraIntrinsics Ka = fa.intrinsics.scaled(config.working_scale);
    const CameraIntrinsics Kb = fb.intrinsics.scaled(config.working_scale);
    EpipolarResult er;
    try {
      er = ransac_epipolar_filter(m.corr, Ka, Kb, pair_ransac(config, source, target));
    } catch (const Error& e) {
      throw Error(ErrorCode::DisconnectedCluster,
                  "no relative motion between frames " + std::to_string(fa.frame_id) + " and " +
                      std::to_string(fb.frame_id) + " (" + e.what() + ")");
    }
    const Mat3& R = er.pose.rotation;
    const Vec3& t = er.pose.translation_direction;

    const std::map<TrackId, Vec3> pts = known_points();
    std::vector<double> ratios;
    for (std::size_t k = 0; k < m.track_index.size(); ++k) {
      if (!er.inliers[k]) continue;
      auto it = pts.find(local[m.track_index[k]].track_id);
      if (it == pts.end()) continue;
      const double z_known = seed[source]->transform(it->second).z();
      const Vec3 xa = Ka.unproject(m.corr[k].a);
      const Vec3 xb = Kb.unproject(m.corr[k].b);
      Eigen::Matrix<double, 3, 2> A;
      A.col(0) = R * xa;
      A.col(1) = -xb;
      const Eigen::Vector2d d = (A.transpose() * A).ldlt().solve(-A.transpose() * t);
      if (d.x() > 0.0 && d.y() > 0.0 && z_known > 0.0) ratios.push_back(z_known / d.x());
    }
    double scale = 1.0;
    if (ratios.size() >= 3) {
      scale = median(ratios);
      // Without priors the scale carried in from the previous window is held
      // by the baseline to the fixed frame rather than by frozen points.
      if (!any_prior && !problem.baseline && problem.fixed_frame_ids.size() == 1 &&
          problem.fixed_frame_ids.count(window[source].frame_id))
        problem.baseline = BaselineConstraint{window[source].frame_id, window[target].frame_id};
    } else if (canonical && !problem.baseline) {
      problem.baseline = BaselineConstraint{window[source].frame_id, window[target].frame_id};
    } else {
      throw Error(ErrorCode::DisconnectedCluster,
                  "cannot fix the scale of frame " + std::to_string(fb.frame_id) + ": too few known points");
    }
    Pose pb;
    pb.rotation = R * seed[source]->rotation;
    pb.translation = R * seed[source]->translation + scale * t;
    seed[target] = pb;
  }
  if (problem.baseline && !problem.fixed_frame_ids.count(problem.baseline->reference)) problem.baseline.reset();

  for (std::size_t i = 0; i < n; ++i) {
    WindowFrame wf;
    wf.frame_id = window[i].frame_id;
    wf.intrinsics = window[i].intrinsics;
    wf.pose = *seed[i];
    if (!problem.fixed_frame_ids.count(wf.frame_id)) wf.prior = window[i].gnss_prior;
    problem.frames.push_back(wf);
  }

  // Points: carried over from the previous solution, otherwise triangulated.
  std::map<FrameId, Pose> poses;
  for (const auto& wf : problem.frames) poses[wf.frame_id] = wf.pose;
  for (const auto& t : local) {
    Vec3 p;
    bool fixed = false;
    auto prev = previous ? previous->points.find(t.track_id) : std::map<TrackId, TiePoint>::const_iterator{};
    if (previous && prev != previous->points.end()) {
      p = prev->second.position;
      fixed = !any_prior && !problem.baseline;
      bool in_front = true;
      for (const auto& o : t.observations) in_front = in_front && poses[o.frame_id].transform(p).z() > 0.0;
      if (!in_front) continue;
    } else {
      try {
        p = triangulate(t.observations, poses, intrinsics);
      } catch (const Error&) {
        continue;
      }
    }
    problem.points[t.track_id] = p;
    if (fixed) problem.fixed_point_ids.insert(t.track_id);
    for (const auto& o : t.observations) problem.observations.push_back({t.track_id, o.frame_id, o.pixel});
  }
  return problem;
}

std::string diagnostics_record(int cluster_id, const BaSolution& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "cluster=%d iterations=%d initial_cost=%.9g final_cost=%.9g inliers=%d rms_px=%.6f",
                cluster_id, s.iterations, s.initial_cost, s.final_cost, s.inlier_count, s.rms_reprojection);
  return buf;
}

}  // namespace aerofuse
