#include "aerofuse/densifier.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "aerofuse/error.hpp"
#include "aerofuse/io.hpp"
#include "aerofuse/rng.hpp"

extern char** environ;

namespace aerofuse {

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

std::string_view to_string(DensifierKind kind) noexcept {
  switch (kind) {
    case DensifierKind::Idw: return "idw";
    case DensifierKind::PlaneFit: return "plane_fit";
    case DensifierKind::External: return "external";
  }
  return "unknown";
}

DensifierKind parse_densifier_kind(std::string_view text) {
  if (text == "idw") return DensifierKind::Idw;
  if (text == "plane_fit") return DensifierKind::PlaneFit;
  if (text == "external") return DensifierKind::External;
  throw Error(ErrorCode::ConfigError, "unknown densifier '" + std::string(text) + "'");
}

void DensifierConfig::validate() const {
  if (!(anchor_agreement_tol > 0.0 && anchor_agreement_tol < 1.0))
    throw Error(ErrorCode::ConfigError, "anchor agreement tolerance must be in (0, 1)");
  if (!(max_depth > 0.0)) throw Error(ErrorCode::ConfigError, "max depth must be positive");
  if (idw_neighbors < 1 || !(idw_power > 0.0)) throw Error(ErrorCode::ConfigError, "invalid idw parameters");
  if (plane_trials < 1) throw Error(ErrorCode::ConfigError, "plane fit needs at least one trial");
  if (kind == DensifierKind::External && external_command.empty())
    throw Error(ErrorCode::ConfigError, "external densifier needs a command");
  if (!(external_timeout_s > 0.0)) throw Error(ErrorCode::ConfigError, "external timeout must be positive");
}

ScatteredInterpolator::ScatteredInterpolator(std::vector<Sample> samples, int width, int height, int neighbors,
                                             double power)
    : samples_(std::move(samples)), width_(width), height_(height), neighbors_(neighbors), power_(power) {
  if (samples_.empty()) throw Error(ErrorCode::EmptyAnchor, "no samples to interpolate");
  const double area = static_cast<double>(width_) * height_;
  bucket_ = std::max(4, static_cast<int>(std::sqrt(3.0 * area / static_cast<double>(samples_.size()))));
  bx_ = (width_ + bucket_ - 1) / bucket_;
  by_ = (height_ + bucket_ - 1) / bucket_;
  buckets_.resize(static_cast<std::size_t>(bx_) * by_);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const int cx = std::clamp(samples_[i].u / bucket_, 0, bx_ - 1);
    const int cy = std::clamp(samples_[i].v / bucket_, 0, by_ - 1);
    buckets_[static_cast<std::size_t>(cy) * bx_ + cx].push_back(i);
  }
}

void ScatteredInterpolator::knn(int u, int v, std::size_t k, std::vector<Hit>& out, long exclude) const {
  out.clear();
  const int cx = std::clamp(u / bucket_, 0, bx_ - 1);
  const int cy = std::clamp(v / bucket_, 0, by_ - 1);
  const int max_ring = std::max(bx_, by_);
  auto consider = [&](std::size_t idx) {
    if (static_cast<long>(idx) == exclude) return;
    const long du = samples_[idx].u - u;
    const long dv = samples_[idx].v - v;
    const Hit h{du * du + dv * dv, idx};
    auto before = [](const Hit& a, const Hit& b) { return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index); };
    if (out.size() == k && !before(h, out.back())) return;
    if (out.size() == k) out.pop_back();
    out.insert(std::upper_bound(out.begin(), out.end(), h, before), h);
  };
  for (int r = 0; r <= max_ring; ++r) {
    for (int y = cy - r; y <= cy + r; ++y) {
      if (y < 0 || y >= by_) continue;
      const bool edge_row = (y == cy - r || y == cy + r);
      for (int x = cx - r; x <= cx + r; x += (edge_row ? 1 : 2 * r)) {
        if (x >= 0 && x < bx_)
          for (std::size_t idx : buckets_[static_cast<std::size_t>(y) * bx_ + x]) consider(idx);
        if (r == 0) break;
      }
    }
    const long reach = static_cast<long>(r) * bucket_;
    if (out.size() == k && out.back().d2 <= reach * reach) break;
  }
}

double ScatteredInterpolator::operator()(int u, int v) const {
  thread_local std::vector<Hit> hits;
  knn(u, v, static_cast<std::size_t>(neighbors_), hits);
  if (hits.front().d2 == 0) return samples_[hits.front().index].value;
  double num = 0.0, den = 0.0;
  for (const auto& h : hits) {
    const double d2 = static_cast<double>(h.d2);
    const double w = power_ == 2.0 ? 1.0 / d2 : std::pow(d2, -0.5 * power_);
    num += w * samples_[h.index].value;
    den += w;
  }
  return num / den;
}

double ScatteredInterpolator::nearest_distance(int u, int v) const {
  thread_local std::vector<Hit> hits;
  knn(u, v, 1, hits);
  return std::sqrt(static_cast<double>(hits.front().d2));
}

double ScatteredInterpolator::median_spacing() const {
  if (samples_.size() < 2) return 0.0;
  std::vector<double> d(samples_.size());
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    knn(samples_[i].u, samples_[i].v, 1, hits, static_cast<long>(i));
    d[i] = std::sqrt(static_cast<double>(hits.front().d2));
  }
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

std::vector<std::uint8_t> convex_hull_mask(const std::vector<std::pair<int, int>>& uv, int width, int height) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  if (uv.empty()) return mask;
  std::vector<std::pair<long, long>> pts(uv.begin(), uv.end());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  auto cross = [](const auto& o, const auto& a, const auto& b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<long, long>> hull;
  if (pts.size() < 3) {
    hull = pts;
  } else {
    hull.resize(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
      hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
      while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
      hull[k++] = pts[i];
    }
    hull.resize(k - 1);
  }
  const std::size_t n = hull.size();
  for (int y = 0; y < height; ++y) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = hull[i];
      const auto& q = hull[(i + 1) % n];
      if (y < std::min(p.second, q.second) || y > std::max(p.second, q.second)) continue;
      if (p.second == q.second) {
        lo = std::min({lo, double(p.first), double(q.first)});
        hi = std::max({hi, double(p.first), double(q.first)});
      } else {
        const double x = p.first + double(y - p.second) * double(q.first - p.first) / double(q.second - p.second);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (lo > hi) continue;
    const int a = std::max(0, static_cast<int>(std::ceil(lo - 1e-9)));
    const int b = std::min(width - 1, static_cast<int>(std::floor(hi + 1e-9)));
    for (int x = a; x <= b; ++x) mask[static_cast<std::size_t>(y) * width + x] = 1;
  }
  return mask;
}

namespace {

DepthMap empty_like(const AnchorMap& anchor, std::string producer) {
  DepthMap d;
  d.frame_id = anchor.frame_id;
  d.width = anchor.width;
  d.height = anchor.height;
  d.pose = anchor.pose;
  d.intrinsics = anchor.intrinsics;
  d.producer = std::move(producer);
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  d.depth.assign(n, std::numeric_limits<double>::quiet_NaN());
  d.valid.assign(n, 0);
  return d;
}

std::vector<ScatteredInterpolator::Sample> anchor_samples(const AnchorMap& anchor) {
  std::vector<ScatteredInterpolator::Sample> s;
  s.reserve(anchor.cells.size());
  for (const auto& [key, cell] : anchor.cells) s.push_back({key.second, key.first, cell.depth});
  return s;
}

// Marks pixels inside the anchor hull or near an anchor, with a depth in range.
void fill_validity(DepthMap& d, const AnchorMap& anchor, const ScatteredInterpolator& interp, double max_depth) {
  std::vector<std::pair<int, int>> uv;
  uv.reserve(anchor.cells.size());
  for (const auto& [key, cell] : anchor.cells) uv.emplace_back(key.second, key.first);
  const auto hull = convex_hull_mask(uv, d.width, d.height);
  const double reach = 2.0 * interp.median_spacing();
  for (int v = 0; v < d.height; ++v) {
    for (int u = 0; u < d.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * d.width + u;
      const double z = d.depth[i];
      const bool in_range = std::isfinite(z) && z > 0.0 && z <= max_depth;
      const bool near = hull[i] || interp.nearest_distance(u, v) <= reach;
      d.valid[i] = in_range && near ? 1 : 0;
    }
  }
}

DepthMap densify_idw(const AnchorMap& anchor, const DensifierConfig& config) {
  DepthMap d = empty_like(anchor, "idw");
  const ScatteredInterpolator interp(anchor_samples(anchor), d.width, d.height, config.idw_neighbors,
                                     config.idw_power);
  for (int v = 0; v < d.height; ++v)
    for (int u = 0; u < d.width; ++u) d.depth[static_cast<std::size_t>(v) * d.width + u] = interp(u, v);
  fill_validity(d, anchor, interp, config.max_depth);
  return d;
}

struct Plane {
  double a = 0.0, b = 0.0, c = 0.0;  // depth = a u + b v + c
  double operator()(double u, double v) const { return a * u + b * v + c; }
};

std::optional<Plane> plane_through(const std::vector<ScatteredInterpolator::Sample>& s, std::size_t i,
                                   std::size_t j, std::size_t k) {
  Eigen::Matrix3d A;
  Eigen::Vector3d y;
  for (int r = 0; const std::size_t idx : {i, j, k}) {
    A.row(r) << s[idx].u, s[idx].v, 1.0;
    y(r++) = s[idx].value;
  }
  const double area2 = std::abs((A(1, 0) - A(0, 0)) * (A(2, 1) - A(0, 1)) - (A(2, 0) - A(0, 0)) * (A(1, 1) - A(0, 1)));
  if (area2 < 1.0) return std::nullopt;
  const Eigen::Vector3d p = A.partialPivLu().solve(y);
  return Plane{p(0), p(1), p(2)};
}

Plane fit_plane_lmeds(const std::vector<ScatteredInterpolator::Sample>& s, const DensifierConfig& config) {
  const std::size_t n = s.size();
  Plane best;
  double best_med = std::numeric_limits<double>::infinity();
  bool found = false;
  Rng rng(config.seed);
  std::vector<double> r2(n);
  for (int trial = 0; trial < config.plane_trials; ++trial) {
    const std::size_t i = rng.below(n), j = rng.below(n), k = rng.below(n);
    if (i == j || j == k || i == k) continue;
    const auto plane = plane_through(s, i, j, k);
    if (!plane) continue;
    for (std::size_t t = 0; t < n; ++t) {
      const double e = s[t].value - (*plane)(s[t].u, s[t].v);
      r2[t] = e * e;
    }
    std::nth_element(r2.begin(), r2.begin() + static_cast<std::ptrdiff_t>(n / 2), r2.end());
    if (r2[n / 2] < best_med) {
      best_med = r2[n / 2];
      best = *plane;
      found = true;
    }
  }
  if (!found) {
    double mean = 0.0;
    for (const auto& x : s) mean += x.value;
    return Plane{0.0, 0.0, mean / static_cast<double>(n)};
  }

  // Least-squares refit on the consensus set, centred for conditioning.
  const double sigma = 1.4826 * (1.0 + 5.0 / static_cast<double>(n - 3)) * std::sqrt(best_med);
  const double thr = std::max(2.5 * sigma, 1e-9 * std::abs(best.c) + 1e-12);
  double mu = 0.0, mv = 0.0, md = 0.0;
  std::size_t m = 0;
  for (const auto& x : s)
    if (std::abs(x.value - best(x.u, x.v)) <= thr) {
      mu += x.u;
      mv += x.v;
      md += x.value;
      ++m;
    }
  if (m < 3) return best;
  mu /= static_cast<double>(m);
  mv /= static_cast<double>(m);
  md /= static_cast<double>(m);
  Eigen::Matrix2d N = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& x : s) {
    if (std::abs(x.value - best(x.u, x.v)) > thr) continue;
    const Eigen::Vector2d q(x.u - mu, x.v - mv);
    N.noalias() += q * q.transpose();
    rhs += q * (x.value - md);
  }
  const Eigen::FullPivLU<Eigen::Matrix2d> lu(N);
  if (lu.rank() < 2) return best;
  const Eigen::Vector2d ab = lu.solve(rhs);
  return Plane{ab(0), ab(1), md - ab(0) * mu - ab(1) * mv};
}

DepthMap densify_plane(const AnchorMap& anchor, const DensifierConfig& config) {
  DepthMap d = empty_like(anchor, "plane_fit");
  auto samples = anchor_samples(anchor);
  const Plane plane = samples.size() >= 3 ? fit_plane_lmeds(samples, config) : Plane{};
  std::vector<ScatteredInterpolator::Sample> residual = samples;
  for (auto& x : residual) x.value -= plane(x.u, x.v);
  const ScatteredInterpolator interp(residual, d.width, d.height, config.idw_neighbors, config.idw_power);
  for (int v = 0; v < d.height; ++v) {
    for (int u = 0; u < d.width; ++u) {
      const auto cell = anchor.cells.find({v, u});
      d.depth[static_cast<std::size_t>(v) * d.width + u] =
          cell != anchor.cells.end() ? cell->second.depth : plane(u, v) + interp(u, v);
    }
  }
  fill_validity(d, anchor, interp, config.max_depth);
  return d;
}

std::atomic<unsigned> request_counter{0};

DepthMap densify_external(const RgbImage* image, const AnchorMap& anchor, const DensifierConfig& config) {
  namespace fs = std::filesystem;
  const fs::path dir = config.work_dir / ("densify_" + std::to_string(::getpid()) + "_" +
                                          std::to_string(anchor.frame_id) + "_" +
                                          std::to_string(request_counter.fetch_add(1)));
  fs::remove_all(dir);
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  io::write_sdepth(dir / "anchor.sdepth", anchor);
  io::write_camera(dir / "camera.txt", anchor.intrinsics, anchor.pose);
  if (image) io::write_ppm(dir / "image.ppm", *image);

  const std::string cmd = config.external_command + " '" + dir.string() + "'";
  const char* argv[] = {"/bin/sh", "-c", cmd.c_str(), nullptr};
  pid_t pid = 0;
  if (posix_spawn(&pid, "/bin/sh", nullptr, nullptr, const_cast<char* const*>(argv), environ) != 0)
    throw Error(ErrorCode::IoError, "cannot start external densifier");

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(config.external_timeout_s);
  bool exited = false;
  while (!fs::exists(dir / "done")) {
    int status = 0;
    if (!exited && ::waitpid(pid, &status, WNOHANG) == pid) {
      exited = true;
      if (fs::exists(dir / "done")) break;
      throw Error(ErrorCode::ContractViolation, "external densifier exited without a result");
    }
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw Error(ErrorCode::ExternalTimeout, "external densifier did not finish in time");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (!exited) {
    int status = 0;
    ::waitpid(pid, &status, 0);
  }

  io::FloatRaster raster;
  try {
    raster = io::read_fdepth(dir / "depth.fdepth");
  } catch (const Error& e) {
    throw Error(ErrorCode::ContractViolation, std::string("unreadable external result: ") + e.what());
  }
  if (raster.width != anchor.width || raster.height != anchor.height)
    throw Error(ErrorCode::ContractViolation, "external result has the wrong dimensions");

  DepthMap d = empty_like(anchor, "external");
  for (std::size_t i = 0; i < raster.values.size(); ++i) {
    const float z = raster.values[i];
    if (std::isnan(z)) continue;
    if (!(z > 0.0f) || !(static_cast<double>(z) <= config.max_depth))
      throw Error(ErrorCode::ContractViolation, "external depth outside (0, max_depth]");
    d.depth[i] = z;
    d.valid[i] = 1;
  }
  const AgreementReport rep = verify_anchor_agreement(d, anchor, config.anchor_agreement_tol);
  if (rep.violating_cells > 0)
    throw Error(ErrorCode::ContractViolation, std::to_string(rep.violating_cells) +
                                                  " anchor cells disagree (max relative deviation " +
                                                  std::to_string(rep.max_rel_dev) + ")");
  return d;
}

}  // namespace

DepthMap densify(const RgbImage* image, const AnchorMap& anchor, const DensifierConfig& config) {
  config.validate();
  if (anchor.cells.empty()) throw Error(ErrorCode::EmptyAnchor, "anchor map is empty");
  switch (config.kind) {
    case DensifierKind::Idw: return densify_idw(anchor, config);
    case DensifierKind::PlaneFit: return densify_plane(anchor, config);
    case DensifierKind::External: return densify_external(image, anchor, config);
  }
  throw Error(ErrorCode::ConfigError, "unknown densifier");
}

DepthMap densify_with_fallback(const RgbImage* image, const AnchorMap& anchor, const DensifierConfig& config,
                               std::string* failure) {
  try {
    return densify(image, anchor, config);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ContractViolation && e.code() != ErrorCode::ExternalTimeout) throw;
    if (failure) *failure = e.what();
    DensifierConfig idw = config;
    idw.kind = DensifierKind::Idw;
    DepthMap d = densify(image, anchor, idw);
    d.fallback = true;
    return d;
  }
}

AgreementReport verify_anchor_agreement(const DepthMap& depth, const AnchorMap& anchor, double tol) {
  if (depth.width != anchor.width || depth.height != anchor.height || depth.frame_id != anchor.frame_id)
    throw Error(ErrorCode::DimensionMismatch, "depth map and anchor map describe different frames");
  AgreementReport rep;
  for (const auto& [key, cell] : anchor.cells) {
    const std::size_t i = static_cast<std::size_t>(key.first) * depth.width + key.second;
    const double dev = depth.valid[i] ? std::abs(depth.depth[i] - cell.depth) / cell.depth
                                      : std::numeric_limits<double>::infinity();
    rep.max_rel_dev = std::max(rep.max_rel_dev, dev);
    if (!(dev <= tol)) ++rep.violating_cells;
  }
  return rep;
}

}  // namespace aerofuse
