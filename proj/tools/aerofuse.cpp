#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "aerofuse/dataset.hpp"
#include "aerofuse/error.hpp"
#include "aerofuse/metrics.hpp"
#include "aerofuse/pipeline.hpp"
#include "aerofuse/simulator.hpp"

namespace fs = std::filesystem;
using namespace aerofuse;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitConfig = 2;

int exit_code_for(const Error& e) { return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitInput; }

struct RunOptions {
  PipelineConfig config;
  std::string gnss_mode = "auto";
  std::string densifier = "idw";
  std::string input;
  std::string output;
  std::string work_dir;
};

void add_run_options(CLI::App& run, RunOptions& o) {
  PipelineConfig& c = o.config;
  run.add_option("--input", o.input, "Input directory (frames.csv, tracks.txt, markers.csv, images/)");
  run.add_option("--output", o.output, "Output directory");
  run.add_flag("--load-images,!--no-load-images", c.load_images, "Read images/frame_<id>.ppm when present");
  run.add_option("--overlap-threshold", c.clustering.overlap_threshold);
  run.add_option("--max-cluster-size", c.clustering.max_cluster_size);
  run.add_option("--gnss-mode", o.gnss_mode, "auto, dynamic or triple");
  run.add_option("--ground-elevation", c.clustering.ground_elevation);
  run.add_option("--huber-delta", c.ba.huber_delta);
  run.add_option("--working-scale", c.ba.working_scale);
  run.add_option("--feature-cap", c.ba.feature_cap);
  run.add_option("--fixed-frames-M", c.ba.fixed_frames);
  run.add_option("--attitude-sigma", c.ba.attitude_sigma);
  run.add_option("--observation-sigma-px", c.ba.observation_sigma_px);
  run.add_option("--prune-factor", c.ba.prune_factor);
  run.add_option("--ransac-threshold", c.ba.ransac.threshold_px);
  run.add_option("--ransac-iters", c.ba.ransac.max_iters);
  run.add_option("--ransac-confidence", c.ba.ransac.confidence);
  run.add_option("--ransac-min-inlier-ratio", c.ba.ransac.min_inlier_ratio);
  run.add_option("--seed", c.ba.ransac.seed);
  run.add_option("--max-ba-iters", c.ba.max_iters);
  run.add_option("--gradient-tol", c.ba.gradient_tol);
  run.add_option("--param-tol", c.ba.param_tol);
  run.add_option("--initial-lambda", c.ba.initial_lambda);
  run.add_option("--gnss-prior-sigma-xyz", c.gnss_prior_sigma, "Overrides the per-frame GNSS sigma when > 0");
  run.add_option("--anchor-filter-neighbors", c.anchor_filter.neighbors, "0 disables the anchor depth filter");
  run.add_option("--anchor-filter-tolerance", c.anchor_filter.relative_tolerance);
  run.add_option("--densifier", o.densifier, "idw, plane_fit or external");
  run.add_option("--anchor-agreement-tol", c.densifier.anchor_agreement_tol);
  run.add_option("--max-depth", c.densifier.max_depth);
  run.add_option("--idw-neighbors", c.densifier.idw_neighbors);
  run.add_option("--idw-power", c.densifier.idw_power);
  run.add_option("--densifier-seed", c.densifier.seed);
  run.add_option("--plane-trials", c.densifier.plane_trials);
  run.add_option("--external-command", c.densifier.external_command);
  run.add_option("--external-timeout", c.densifier.external_timeout_s);
  run.add_option("--work-dir", o.work_dir);
  run.add_option("--voxel-size", c.voxel_size);
  run.add_option("--truncation", c.truncation, "<= 0 selects 3 x voxel-size");
  run.add_option("--max-weight", c.max_weight);
  run.add_flag("--auto-grow,!--no-auto-grow", c.auto_grow);
  run.add_option("--dsm-cell-size", c.dsm_cell_size);
  run.add_option("--occlusion-tolerance", c.ortho.occlusion_tolerance);
  run.add_option("--window-k", c.window_k);
  run.add_option("--workers", c.workers);
  run.add_option("--time-budget-per-image", c.time_budget_per_image);
}

int do_run(RunOptions& o) {
  PipelineConfig& c = o.config;
  try {
    c.clustering.gnss_mode = parse_gnss_mode(o.gnss_mode);
    c.densifier.kind = parse_densifier_kind(o.densifier);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  c.input_dir = o.input;
  c.output_dir = o.output;
  if (!o.work_dir.empty()) c.densifier.work_dir = o.work_dir;
  try {
    const RunResult r = run(c);
    std::size_t ok = 0;
    for (const auto& rec : r.manifest.clusters) ok += rec.ok ? 1 : 0;
    std::printf("clusters: %zu ok of %zu\n", ok, r.manifest.clusters.size());
    if (r.report) std::fputs(format_report(*r.report).c_str(), stdout);
    if (r.marker_errors)
      std::printf("marker_rel_xy_pct=%.6f\nmarker_rel_z_pct=%.6f\n", r.marker_errors->rel_xy_pct,
                  r.marker_errors->rel_z_pct);
    std::printf("config_hash=%s\n", r.manifest.config_hash.c_str());
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e);
  }
}

struct SimOptions {
  std::uint64_t seed = 1;
  std::string out;
  int frames = 22;
  int strips = 1;
  int features = 20000;
  double altitude = 50.0;
  double overlap = 0.8;
  double noise = 0.5;
  double outliers = 0.0;
  double gnss_sigma = 0.05;
  double dropout = 0.0;
  double image_scale = 1.0;
  bool images = false;
};

int do_simulate(const SimOptions& o) {
  try {
    sim::SceneConfig scfg;
    scfg.features = o.features;
    const sim::SyntheticScene scene = sim::generate_scene(o.seed, scfg);
    sim::MissionPlan plan;
    plan.frames_per_strip = o.frames;
    plan.strips = o.strips;
    plan.altitude = o.altitude;
    plan.forward_overlap = o.overlap;
    plan.gnss_sigma = o.gnss_sigma;
    plan.dropout = o.dropout;
    if (o.image_scale != 1.0) {
      const CameraIntrinsics K = plan.intrinsics.scaled(o.image_scale);
      plan.intrinsics = K;
    }
    const sim::Mission mission = sim::generate_mission(scene, plan, o.seed);
    sim::TrackConfig tcfg;
    tcfg.features = o.features;
    tcfg.pixel_noise = o.noise;
    tcfg.outlier_fraction = o.outliers;
    const sim::TrackSet tracks = sim::render_tracks(scene, mission, tcfg, o.seed);
    sim::write_dataset(o.out, scene, mission, tracks, o.images);
    std::ofstream cfg(fs::path(o.out) / "pipeline.cfg");
    cfg << "input = " << fs::absolute(o.out).string() << "\noutput = "
        << (fs::absolute(o.out) / "products").string() << "\ndensifier = idw\n";
    std::printf("frames=%zu tracks=%zu outliers=%zu markers=%zu\n", mission.frames.size(), tracks.tracks.size(),
                tracks.outliers.size(), tracks.marker_tracks.size());
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument ? kExitConfig : kExitInput;
  }
}

int do_metrics(const std::string& dsm_path, const std::string& markers_path, int k) {
  try {
    const HeightRaster dsm = io::read_dsm(dsm_path);
    std::fputs(format_report(evaluate_dsm(dsm, k)).c_str(), stdout);
    if (!markers_path.empty()) {
      const auto pairs = marker_pairs(io::read_marker_positions(markers_path));
      const MarkerErrors e = marker_errors(pairs);
      std::printf("id_a,id_b,measured_xy_m,measured_z_m,truth_xy_m,truth_z_m,rel_xy_pct,rel_z_pct\n");
      for (const auto& p : e.pairs)
        std::printf("%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.id_a.c_str(), p.id_b.c_str(), p.measured_xy,
                    p.measured_z, p.truth_xy, p.truth_z, p.rel_xy_pct, p.rel_z_pct);
      std::printf("e_xy_m=%.6f\ne_z_m=%.6f\nrel_xy_pct=%.6f\nrel_z_pct=%.6f\n", e.e_xy, e.e_z, e.rel_xy_pct,
                  e.rel_z_pct);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument ? kExitConfig : kExitInput;
  }
}

int do_validate(const std::string& dir) {
  try {
    const Dataset d = validate_inputs(dir);
    std::size_t obs = 0;
    for (const auto& t : d.tracks) obs += t.observations.size();
    std::printf("ok: frames=%zu tracks=%zu observations=%zu markers=%zu\n", d.frames.size(), d.tracks.size(), obs,
                d.markers.size());
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental aerial mapping: clustering, bundle adjustment, densification and fusion"};
  app.require_subcommand(1);

  // Config files are only read by a top-level parser, so `run` owns one.
  if (argc > 1 && std::string(argv[1]) == "run") {
    CLI::App run_app{"Process an input directory", "aerofuse run"};
    RunOptions run_opts;
    run_app.set_config("--config", "", "Configuration file of key = value lines", true);
    run_app.allow_config_extras(CLI::config_extras_mode::error);
    add_run_options(run_app, run_opts);
    try {
      run_app.parse(argc - 1, argv + 1);
    } catch (const CLI::CallForHelp& e) {
      return run_app.exit(e);
    } catch (const CLI::ParseError& e) {
      run_app.exit(e);
      return kExitConfig;
    }
    return do_run(run_opts);
  }
  app.add_subcommand("run", "Process an input directory (run --help for the configuration keys)");

  auto* sim_cmd = app.add_subcommand("simulate", "Write a synthetic flight dataset");
  SimOptions sim_opts;
  sim_cmd->add_option("--seed", sim_opts.seed)->required();
  sim_cmd->add_option("--out", sim_opts.out)->required();
  sim_cmd->add_option("--frames", sim_opts.frames, "Frames per strip");
  sim_cmd->add_option("--strips", sim_opts.strips);
  sim_cmd->add_option("--features", sim_opts.features);
  sim_cmd->add_option("--altitude", sim_opts.altitude);
  sim_cmd->add_option("--forward-overlap", sim_opts.overlap);
  sim_cmd->add_option("--pixel-noise", sim_opts.noise);
  sim_cmd->add_option("--outlier-fraction", sim_opts.outliers);
  sim_cmd->add_option("--gnss-sigma", sim_opts.gnss_sigma);
  sim_cmd->add_option("--gnss-dropout", sim_opts.dropout);
  sim_cmd->add_option("--image-scale", sim_opts.image_scale, "Resamples the camera (0.25 = 300 x 200)");
  sim_cmd->add_flag("--images", sim_opts.images, "Render images/frame_<id>.ppm");

  auto* metrics_cmd = app.add_subcommand("metrics", "Evaluate a DSM and marker positions");
  std::string dsm_path, markers_path;
  int window_k = 3;
  metrics_cmd->add_option("--dsm", dsm_path)->required();
  metrics_cmd->add_option("--markers", markers_path, "markers_measured.csv written by run");
  metrics_cmd->add_option("--window-k", window_k);

  auto* validate_cmd = app.add_subcommand("validate", "Schema-check an input directory");
  std::string in_dir;
  validate_cmd->add_option("--in", in_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (sim_cmd->parsed()) return do_simulate(sim_opts);
  if (metrics_cmd->parsed()) return do_metrics(dsm_path, markers_path, window_k);
  return do_validate(in_dir);
}
