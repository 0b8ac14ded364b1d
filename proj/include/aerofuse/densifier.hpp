#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aerofuse/anchor.hpp"
#include "aerofuse/raster.hpp"

namespace aerofuse {

struct DepthMap {
  FrameId frame_id = 0;
  int width = 0;
  int height = 0;
  std::vector<double> depth;          ///< row-major, meters (camera z)
  std::vector<std::uint8_t> valid;    ///< row-major mask
  Pose pose;
  CameraIntrinsics intrinsics;
  std::string producer;
  bool fallback = false;              ///< re-densified after a failing producer

  double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
  bool is_valid(int u, int v) const { return valid[static_cast<std::size_t>(v) * width + u] != 0; }
  std::size_t valid_count() const;
};

enum class DensifierKind { Idw, PlaneFit, External };

std::string_view to_string(DensifierKind kind) noexcept;
DensifierKind parse_densifier_kind(std::string_view text);

struct DensifierConfig {
  DensifierKind kind = DensifierKind::Idw;
  double anchor_agreement_tol = 0.01;
  double max_depth = 1000.0;
  int idw_neighbors = 12;
  double idw_power = 2.0;
  std::uint64_t seed = 7;
  int plane_trials = 500;
  /// Shell command of the external worker; the request directory is appended as its argument.
  std::string external_command;
  double external_timeout_s = 60.0;
  std::filesystem::path work_dir = std::filesystem::temp_directory_path();

  void validate() const;
};

/// Dense depth for the anchor map's frame. Throws EmptyAnchor, and for the
/// external producer ContractViolation or ExternalTimeout.
DepthMap densify(const RgbImage* image, const AnchorMap& anchor, const DensifierConfig& config);

/// densify, re-running with the idw built-in (flagged `fallback`) when the
/// configured producer violates the contract or times out. `failure`
/// receives the reason when that happens.
DepthMap densify_with_fallback(const RgbImage* image, const AnchorMap& anchor, const DensifierConfig& config,
                               std::string* failure = nullptr);

struct AgreementReport {
  double max_rel_dev = 0.0;
  int violating_cells = 0;
};

AgreementReport verify_anchor_agreement(const DepthMap& depth, const AnchorMap& anchor, double tol);

/// Inverse-distance interpolation of scattered pixel values with a bucket grid.
class ScatteredInterpolator {
 public:
  struct Sample {
    int u = 0;
    int v = 0;
    double value = 0.0;
  };

  ScatteredInterpolator(std::vector<Sample> samples, int width, int height, int neighbors, double power);

  /// Exact at a sample location, weighted mean of the k nearest samples elsewhere.
  double operator()(int u, int v) const;
  /// Distance to the nearest sample, pixels.
  double nearest_distance(int u, int v) const;
  /// Median over samples of the distance to their nearest other sample.
  double median_spacing() const;

 private:
  struct Hit {
    long d2;
    std::size_t index;
  };
  void knn(int u, int v, std::size_t k, std::vector<Hit>& out, long exclude = -1) const;

  std::vector<Sample> samples_;
  int width_;
  int height_;
  int neighbors_;
  double power_;
  int bucket_;
  int bx_;
  int by_;
  std::vector<std::vector<std::size_t>> buckets_;
};

/// Pixels inside the convex hull of the points, row-major mask.
std::vector<std::uint8_t> convex_hull_mask(const std::vector<std::pair<int, int>>& uv, int width, int height);

}  // namespace aerofuse
