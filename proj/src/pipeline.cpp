#include "aerofuse/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <future>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

#include "aerofuse/dataset.hpp"
#include "aerofuse/error.hpp"
#include "aerofuse/io.hpp"
#include "json.hpp"

namespace aerofuse {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::ConfigError, message);
}

}  // namespace

void PipelineConfig::validate() const {
  require(!input_dir.empty(), "input directory is not set");
  require(!output_dir.empty(), "output directory is not set");
  try {
    clustering.validate();
    densifier.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
  require(ba.huber_delta > 0.0, "huber-delta must be positive");
  require(ba.working_scale > 0.0 && ba.working_scale <= 1.0, "working-scale must lie in (0, 1]");
  require(ba.feature_cap >= 8, "feature-cap must be at least 8");
  require(ba.fixed_frames >= 0 && ba.fixed_frames <= 2, "fixed-frames-M must be 0, 1 or 2");
  require(ba.max_iters >= 1, "max-ba-iters must be at least 1");
  require(ba.attitude_sigma > 0.0, "attitude-sigma must be positive");
  require(ba.prune_factor > 0.0, "prune-factor must be positive");
  require(ba.ransac.threshold_px > 0.0 && ba.ransac.max_iters >= 1, "invalid RANSAC settings");
  require(gnss_prior_sigma >= 0.0, "gnss-prior-sigma-xyz must be non-negative");
  require(anchor_filter.neighbors >= 0 && anchor_filter.relative_tolerance > 0.0, "invalid anchor filter");
  require(voxel_size > 0.0, "voxel-size must be positive");
  require(truncation <= 0.0 || truncation >= 2.0 * voxel_size, "truncation must be at least two voxels");
  require(max_weight >= 1, "max-weight must be at least 1");
  require(dsm_cell_size > 0.0, "dsm-cell-size must be positive");
  require(ortho.occlusion_tolerance > 0.0, "occlusion-tolerance must be positive");
  require(window_k >= 3 && window_k % 2 == 1, "window-k must be odd and at least 3");
  require(workers >= 1, "workers must be at least 1");
  require(time_budget_per_image > 0.0, "time-budget-per-image must be positive");
}

std::vector<std::pair<std::string, std::string>> canonical_entries(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> e{
      {"input", c.input_dir.string()},
      {"output", c.output_dir.string()},
      {"load-images", c.load_images ? "true" : "false"},
      {"overlap-threshold", num(c.clustering.overlap_threshold)},
      {"max-cluster-size", std::to_string(c.clustering.max_cluster_size)},
      {"gnss-mode", std::string(to_string(c.clustering.gnss_mode))},
      {"ground-elevation", num(c.clustering.ground_elevation)},
      {"huber-delta", num(c.ba.huber_delta)},
      {"working-scale", num(c.ba.working_scale)},
      {"feature-cap", std::to_string(c.ba.feature_cap)},
      {"fixed-frames-M", std::to_string(c.ba.fixed_frames)},
      {"attitude-sigma", num(c.ba.attitude_sigma)},
      {"observation-sigma-px", num(c.ba.observation_sigma_px)},
      {"prune-factor", num(c.ba.prune_factor)},
      {"ransac-threshold", num(c.ba.ransac.threshold_px)},
      {"ransac-iters", std::to_string(c.ba.ransac.max_iters)},
      {"ransac-confidence", num(c.ba.ransac.confidence)},
      {"ransac-min-inlier-ratio", num(c.ba.ransac.min_inlier_ratio)},
      {"seed", std::to_string(c.ba.ransac.seed)},
      {"max-ba-iters", std::to_string(c.ba.max_iters)},
      {"gradient-tol", num(c.ba.gradient_tol)},
      {"param-tol", num(c.ba.param_tol)},
      {"initial-lambda", num(c.ba.initial_lambda)},
      {"gnss-prior-sigma-xyz", num(c.gnss_prior_sigma)},
      {"anchor-filter-neighbors", std::to_string(c.anchor_filter.neighbors)},
      {"anchor-filter-tolerance", num(c.anchor_filter.relative_tolerance)},
      {"densifier", std::string(to_string(c.densifier.kind))},
      {"anchor-agreement-tol", num(c.densifier.anchor_agreement_tol)},
      {"max-depth", num(c.densifier.max_depth)},
      {"idw-neighbors", std::to_string(c.densifier.idw_neighbors)},
      {"idw-power", num(c.densifier.idw_power)},
      {"densifier-seed", std::to_string(c.densifier.seed)},
      {"plane-trials", std::to_string(c.densifier.plane_trials)},
      {"external-command", c.densifier.external_command},
      {"external-timeout", num(c.densifier.external_timeout_s)},
      {"work-dir", c.densifier.work_dir.string()},
      {"voxel-size", num(c.voxel_size)},
      {"truncation", num(c.truncation)},
      {"max-weight", std::to_string(c.max_weight)},
      {"auto-grow", c.auto_grow ? "true" : "false"},
      {"dsm-cell-size", num(c.dsm_cell_size)},
      {"occlusion-tolerance", num(c.ortho.occlusion_tolerance)},
      {"window-k", std::to_string(c.window_k)},
      {"workers", std::to_string(c.workers)},
      {"time-budget-per-image", num(c.time_budget_per_image)},
  };
  std::sort(e.begin(), e.end());
  return e;
}

std::string config_hash(const PipelineConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : canonical_entries(config)) feed(k + '=' + v + '\n');
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunManifest::to_json() const {
  using nlohmann::json;
  json j;
  j["config_hash"] = config_hash;
  j["total_ms"] = total_ms;
  json cl = json::array();
  for (const auto& r : clusters) {
    json c;
    c["cluster_id"] = r.cluster_id;
    c["frames"] = r.frame_ids;
    c["L"] = r.frame_ids.size();
    c["m"] = r.representative_index;
    c["representative"] = r.frame_ids.empty() ? -1 : r.frame_ids[static_cast<std::size_t>(r.representative_index)];
    c["ba_window"] = r.ba_window;
    c["mode"] = std::string(to_string(r.mode));
    c["overlap_warning"] = r.overlap_warning;
    c["ok"] = r.ok;
    if (!r.failure.empty()) c["failure"] = r.failure;
    c["ba"] = {{"iterations", r.ba_iterations},
               {"initial_cost", r.ba_initial_cost},
               {"final_cost", r.ba_final_cost},
               {"inliers", r.ba_inliers},
               {"rms_px", r.ba_rms_px},
               {"epipolar_rejected", r.epipolar_rejected}};
    c["anchor_count"] = r.anchor_count;
    c["anchors_rejected"] = r.anchors_rejected;
    c["densifier"] = r.densifier;
    c["densifier_fallback"] = r.densifier_fallback;
    if (!r.densifier_failure.empty()) c["densifier_failure"] = r.densifier_failure;
    c["gauge_restart"] = r.gauge_restart;
    c["fused"] = r.fused;
    c["timings_ms"] = {{"ba", r.timings.ba_ms},
                       {"anchor", r.timings.anchor_ms},
                       {"densify", r.timings.densify_ms},
                       {"fusion", r.timings.fusion_ms},
                       {"total", r.timings.total_ms()}};
    c["per_image_ms"] = r.frame_ids.empty() ? 0.0 : r.per_image_ms();
    cl.push_back(std::move(c));
  }
  j["clusters"] = std::move(cl);
  json art = json::object();
  for (const auto& [k, p] : artifacts) art[k] = p.string();
  j["artifacts"] = std::move(art);
  j["warnings"] = warnings;
  if (error) j["error"] = *error;
  return j.dump(2) + "\n";
}

std::vector<MarkerPair> marker_pairs(const std::vector<MarkerMeasurement>& markers) {
  std::vector<MarkerPair> pairs;
  for (std::size_t a = 0; a < markers.size(); ++a) {
    for (std::size_t b = a + 1; b < markers.size(); ++b) {
      if (!markers[a].truth || !markers[b].truth) continue;
      MarkerPair p;
      p.id_a = markers[a].marker_id;
      p.id_b = markers[b].marker_id;
      p.measured_a = markers[a].measured;
      p.measured_b = markers[b].measured;
      p.truth_xy = (markers[a].truth->head<2>() - markers[b].truth->head<2>()).norm();
      p.truth_z = std::abs(markers[a].truth->z() - markers[b].truth->z());
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

namespace io {

void write_point_cloud(const fs::path& path, const PointCloud& cloud) {
  const bool colored = cloud.colors.size() == cloud.points.size() && !cloud.colors.empty();
  std::string out;
  out.reserve(cloud.points.size() * (colored ? 48 : 36));
  char buf[160];
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    int n;
    if (colored) {
      const Rgb& c = cloud.colors[i];
      n = std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %d %d %d\n", p.x(), p.y(), p.z(), c[0], c[1], c[2]);
    } else {
      n = std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
    }
    out.append(buf, static_cast<std::size_t>(n));
  }
  write_text_atomic(path, out);
}

void write_dsm(const fs::path& path, const HeightRaster& dsm) {
  FloatRaster r;
  r.width = dsm.cols;
  r.height = dsm.rows;
  r.values.reserve(dsm.height.size());
  for (double h : dsm.height) r.values.push_back(static_cast<float>(h));
  write_fdepth(path, r);
  write_text_atomic(fs::path(path.string() + ".hdr"), "origin_x=" + num(dsm.origin.x()) + "\norigin_y=" +
                                                          num(dsm.origin.y()) + "\ncell_size=" +
                                                          num(dsm.cell_size) + "\nnodata=NaN\n");
}

HeightRaster read_dsm(const fs::path& path) {
  const FloatRaster r = read_fdepth(path);
  const fs::path hdr(path.string() + ".hdr");
  std::ifstream in(hdr);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + hdr.string());
  HeightRaster dsm;
  dsm.rows = r.height;
  dsm.cols = r.width;
  bool have[3] = {false, false, false};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "origin_x") dsm.origin.x() = std::stod(value), have[0] = true;
      if (key == "origin_y") dsm.origin.y() = std::stod(value), have[1] = true;
      if (key == "cell_size") dsm.cell_size = std::stod(value), have[2] = true;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InputFormatError, hdr.string() + ": bad value for " + key);
    }
  }
  if (!have[0] || !have[1] || !have[2] || !(dsm.cell_size > 0.0))
    throw Error(ErrorCode::InputFormatError, hdr.string() + ": missing origin or cell size");
  dsm.height.reserve(r.values.size());
  for (float v : r.values) dsm.height.push_back(std::isnan(v) ? std::numeric_limits<double>::quiet_NaN() : v);
  return dsm;
}

void write_marker_positions(const fs::path& path, const std::vector<MarkerMeasurement>& markers) {
  std::string out = "marker_id,track_id,x,y,z,truth_x,truth_y,truth_z\n";
  for (const auto& m : markers) {
    out += m.marker_id + ',' + std::to_string(m.track_id) + ',' + num(m.measured.x()) + ',' + num(m.measured.y()) +
           ',' + num(m.measured.z());
    if (m.truth)
      out += ',' + num(m.truth->x()) + ',' + num(m.truth->y()) + ',' + num(m.truth->z()) + '\n';
    else
      out += ",,,\n";
  }
  write_text_atomic(path, out);
}

std::vector<MarkerMeasurement> read_marker_positions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<MarkerMeasurement> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8 && f.size() != 5)
      throw Error(ErrorCode::InputFormatError, path.filename().string() + ":" + std::to_string(lineno) +
                                                   ": expected 5 or 8 fields");
    try {
      MarkerMeasurement m;
      m.marker_id = f[0];
      m.track_id = std::stoll(f[1]);
      m.measured = Vec3(std::stod(f[2]), std::stod(f[3]), std::stod(f[4]));
      if (f.size() == 8 && !f[5].empty()) m.truth = Vec3(std::stod(f[5]), std::stod(f[6]), std::stod(f[7]));
      out.push_back(std::move(m));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InputFormatError, path.filename().string() + ":" + std::to_string(lineno) +
                                                   ": malformed number");
    }
  }
  return out;
}

void write_marker_errors(const fs::path& path, const MarkerErrors& e) {
  std::string out = "id_a,id_b,measured_xy_m,measured_z_m,truth_xy_m,truth_z_m,rel_xy_pct,rel_z_pct\n";
  char buf[256];
  for (const auto& p : e.pairs) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.id_a.c_str(), p.id_b.c_str(),
                  p.measured_xy, p.measured_z, p.truth_xy, p.truth_z, p.rel_xy_pct, p.rel_z_pct);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean,,,,,,%.6f,%.6f\n", e.rel_xy_pct, e.rel_z_pct);
  out += buf;
  std::snprintf(buf, sizeof buf, "# e_xy_m=%.6f e_z_m=%.6f\n", e.e_xy, e.e_z);
  out += buf;
  write_text_atomic(path, out);
}

}  // namespace io

namespace {

struct DensifyOutcome {
  std::optional<DepthMap> depth;
  std::string failure;
  std::string fallback_reason;
  double ms = 0.0;
};

struct Pending {
  std::size_t record;
  std::future<DensifyOutcome> outcome;
  std::shared_ptr<const RgbImage> image;
  int gauge = 0;
};

std::vector<Track> cap_keeping_markers(std::vector<Track> tracks, const std::set<TrackId>& markers, int cap) {
  std::vector<Track> keep, rest;
  for (auto& t : tracks) (markers.count(t.track_id) ? keep : rest).push_back(std::move(t));
  const int room = std::max(0, cap - static_cast<int>(keep.size()));
  std::vector<Track> capped = apply_feature_cap(rest, room);
  for (auto& t : keep) capped.push_back(std::move(t));
  return capped;
}

void write_manifest(const PipelineConfig& config, RunManifest& manifest) {
  if (config.output_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  const fs::path p = config.output_dir / "manifest.json";
  manifest.artifacts["manifest"] = p;
  io::write_text_atomic(p, manifest.to_json());
}

}  // namespace

RunResult run(const PipelineConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunResult result;
  RunManifest& manifest = result.manifest;
  manifest.config_hash = config_hash(config);

  Dataset data;
  try {
    config.validate();
    data = validate_inputs(config.input_dir, config.load_images);
  } catch (const Error& e) {
    manifest.error = e.what();
    write_manifest(config, manifest);
    throw;
  }
  if (config.gnss_prior_sigma > 0.0)
    for (auto& f : data.frames)
      if (f.gnss_prior) f.gnss_prior->position_sigma = config.gnss_prior_sigma;

  std::vector<Cluster> clusters;
  try {
    clusters = form_clusters(data.frames, config.clustering);
  } catch (const Error& e) {
    manifest.error = e.what();
    write_manifest(config, manifest);
    if (e.code() == ErrorCode::MissingPrior) throw Error(ErrorCode::InputFormatError, e.what());
    throw;
  }
  fs::create_directories(config.output_dir);

  std::map<FrameId, const Frame*> frame_by_id;
  for (const auto& f : data.frames) frame_by_id[f.frame_id] = &f;
  std::set<TrackId> marker_ids;
  for (const auto& m : data.markers) marker_ids.insert(m.track_id);

  TsdfVolume volume(config.voxel_size, config.effective_truncation(), config.max_weight);
  std::vector<DepthMap> fused_depths;
  std::vector<std::shared_ptr<const RgbImage>> fused_images;
  std::map<TrackId, std::pair<Vec3, int>> marker_sums;
  std::string diagnostics;

  std::optional<BaSolution> previous;
  int gauge = 0;
  std::optional<int> fused_gauge;
  std::deque<Pending> pending;

  auto fuse = [&](Pending& p) {
    DensifyOutcome out = p.outcome.get();
    ClusterRecord& rec = manifest.clusters[p.record];
    rec.timings.densify_ms = out.ms;
    if (!out.fallback_reason.empty()) {
      rec.densifier_fallback = true;
      rec.densifier_failure = out.fallback_reason;
    }
    if (!out.depth) {
      rec.ok = false;
      rec.failure = out.failure;
      std::cerr << "cluster " << rec.cluster_id << ": " << out.failure << "\n";
      return;
    }
    rec.densifier = out.depth->producer;
    if (fused_gauge && *fused_gauge != p.gauge) {
      rec.ok = false;
      rec.failure = "reconstruction gauge differs from the fused volume";
      return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto [lo, hi] = depth_bounds(*out.depth, volume.truncation());
      if (volume.empty() || config.auto_grow) volume.grow_to_contain(lo, hi);
      integrate_depth(volume, *out.depth);
      rec.fused = true;
      fused_gauge = p.gauge;
      fused_depths.push_back(std::move(*out.depth));
      fused_images.push_back(p.image);
    } catch (const Error& e) {
      rec.ok = false;
      rec.failure = e.what();
      std::cerr << "cluster " << rec.cluster_id << ": " << e.what() << "\n";
    }
    rec.timings.fusion_ms = elapsed_ms(t0);
  };

  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    const Cluster& cluster = clusters[ci];
    ClusterRecord rec;
    rec.cluster_id = static_cast<int>(ci);
    rec.frame_ids = cluster.frame_ids;
    rec.representative_index = cluster.representative_index;
    rec.ba_window = cluster.ba_window;
    rec.mode = cluster.mode;
    rec.overlap_warning = cluster.overlap_warning;
    rec.densifier = std::string(to_string(config.densifier.kind));

    std::vector<Frame> window;
    for (FrameId id : cluster.ba_window) window.push_back(*frame_by_id.at(id));
    const Frame& rep = *frame_by_id.at(cluster.representative());

    std::optional<AnchorMap> anchor;
    auto t0 = std::chrono::steady_clock::now();
    try {
      TrackFilterResult filtered = filter_tracks_epipolar(window, data.tracks, config.ba);
      rec.epipolar_rejected = filtered.rejected_observations;
      const std::vector<Track> local = cap_keeping_markers(std::move(filtered.tracks), marker_ids, config.ba.feature_cap);
      BaProblem problem;
      try {
        problem = initialize_window(window, local, previous ? &*previous : nullptr, config.ba);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DisconnectedCluster || !previous) throw;
        problem = initialize_window(window, local, nullptr, config.ba);
        rec.gauge_restart = true;
        ++gauge;
      }
      BaSolution sol = solve(problem, SolveConfig::from(config.ba));
      rec.ba_iterations = sol.iterations;
      rec.ba_initial_cost = sol.initial_cost;
      rec.ba_final_cost = sol.final_cost;
      rec.ba_inliers = sol.inlier_count;
      rec.ba_rms_px = sol.rms_reprojection;
      diagnostics += diagnostics_record(rec.cluster_id, sol) + "\n";
      if (gauge == 0) {
        for (const auto& [id, tp] : sol.points) {
          if (!marker_ids.count(id)) continue;
          auto& acc = marker_sums[id];
          if (acc.second == 0) acc.first.setZero();
          acc.first += tp.position;
          ++acc.second;
        }
      }
      for (const auto& [id, pose] : sol.poses) result.poses[id] = pose;
      previous = sol;
      result.solutions.push_back(std::move(sol));
      rec.timings.ba_ms = elapsed_ms(t0);

      t0 = std::chrono::steady_clock::now();
      anchor = build_anchor_map(*previous, rep);
      if (config.anchor_filter.neighbors > 0) rec.anchors_rejected = reject_depth_outliers(*anchor, config.anchor_filter);
      rec.anchor_count = anchor->size();
      if (anchor->empty()) throw Error(ErrorCode::EmptyAnchor, "every anchor was rejected as a depth outlier");
      rec.timings.anchor_ms = elapsed_ms(t0);
      rec.ok = true;
    } catch (const Error& e) {
      rec.ok = false;
      rec.failure = e.what();
      if (rec.timings.ba_ms == 0.0)
        rec.timings.ba_ms = elapsed_ms(t0);
      else
        rec.timings.anchor_ms = elapsed_ms(t0);
      std::cerr << "cluster " << rec.cluster_id << ": " << e.what() << "\n";
      anchor.reset();
    }
    manifest.clusters.push_back(std::move(rec));

    if (anchor) {
      result.anchors.push_back(*anchor);
      const DensifierConfig dcfg = config.densifier;
      std::shared_ptr<const RgbImage> image = rep.image;
      auto task = [dcfg, image, a = std::move(*anchor)]() {
        DensifyOutcome out;
        const auto ts = std::chrono::steady_clock::now();
        try {
          out.depth = densify_with_fallback(image.get(), a, dcfg, &out.fallback_reason);
        } catch (const Error& e) {
          out.failure = e.what();
        }
        out.ms = elapsed_ms(ts);
        return out;
      };
      pending.push_back({manifest.clusters.size() - 1, std::async(std::launch::async, std::move(task)), image, gauge});
      while (static_cast<int>(pending.size()) >= config.workers) {
        fuse(pending.front());
        pending.pop_front();
      }
    }
  }
  while (!pending.empty()) {
    fuse(pending.front());
    pending.pop_front();
  }

  for (const auto& rec : manifest.clusters) {
    if (rec.per_image_ms() > config.time_budget_per_image * 1000.0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "cluster %d: %.1f ms per image exceeds the %.1f s budget", rec.cluster_id,
                    rec.per_image_ms(), config.time_budget_per_image);
      manifest.warnings.emplace_back(buf);
      std::cerr << "warning: " << buf << "\n";
    }
  }

  auto finish = [&]() {
    manifest.total_ms = elapsed_ms(t_start);
    write_manifest(config, manifest);
  };

  io::write_text_atomic(config.output_dir / "ba_diagnostics.txt", diagnostics);
  manifest.artifacts["ba_diagnostics"] = config.output_dir / "ba_diagnostics.txt";

  for (const auto& m : data.markers) {
    auto it = marker_sums.find(m.track_id);
    if (it == marker_sums.end() || it->second.second == 0) {
      manifest.warnings.push_back("marker " + m.marker_id + " was not reconstructed");
      continue;
    }
    MarkerMeasurement mm;
    mm.marker_id = m.marker_id;
    mm.track_id = m.track_id;
    mm.measured = it->second.first / static_cast<double>(it->second.second);
    mm.truth = m.truth;
    mm.windows = it->second.second;
    result.markers.push_back(std::move(mm));
  }
  if (!result.markers.empty()) {
    const fs::path p = config.output_dir / "markers_measured.csv";
    io::write_marker_positions(p, result.markers);
    manifest.artifacts["markers_measured"] = p;
    const auto pairs = marker_pairs(result.markers);
    if (!pairs.empty()) {
      try {
        result.marker_errors = marker_errors(pairs);
        const fs::path q = config.output_dir / "marker_errors.csv";
        io::write_marker_errors(q, *result.marker_errors);
        manifest.artifacts["marker_errors"] = q;
      } catch (const Error& e) {
        manifest.warnings.push_back(std::string("marker errors unavailable: ") + e.what());
      }
    }
  }

  if (volume.empty() || volume.weighted_voxels() == 0) {
    manifest.error = "no cluster reached fusion";
    finish();
    throw Error(ErrorCode::EmptyVolume, "no cluster reached fusion");
  }

  PointCloud cloud = extract_point_cloud(volume);
  const HeightRaster dsm = rasterize_dsm(cloud.points, config.dsm_cell_size);

  std::vector<OrthoSource> sources;
  for (std::size_t i = 0; i < fused_depths.size(); ++i)
    if (fused_images[i]) sources.push_back({fused_depths[i].frame_id, fused_images[i].get(), &fused_depths[i]});
  if (!sources.empty()) {
    const RgbImage ortho = orthomosaic(sources, dsm, config.ortho);
    colorize(cloud, dsm, ortho);
    const fs::path p = config.output_dir / "ortho.ppm";
    io::write_ppm(p, ortho);
    manifest.artifacts["orthomosaic"] = p;
  } else {
    manifest.warnings.emplace_back("no imagery: orthomosaic skipped");
  }

  const fs::path cloud_path = config.output_dir / "point_cloud.xyz";
  io::write_point_cloud(cloud_path, cloud);
  manifest.artifacts["point_cloud"] = cloud_path;
  const fs::path dsm_path = config.output_dir / "dsm.fdepth";
  io::write_dsm(dsm_path, dsm);
  manifest.artifacts["dsm"] = dsm_path;
  manifest.artifacts["dsm_header"] = fs::path(dsm_path.string() + ".hdr");

  result.report = evaluate_dsm(dsm, config.window_k);
  const fs::path report_path = config.output_dir / "report.txt";
  io::write_text_atomic(report_path, format_report(*result.report));
  manifest.artifacts["report"] = report_path;

  finish();
  return result;
}

}  // namespace aerofuse
