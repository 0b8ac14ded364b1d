#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "aerofuse/geometry.hpp"

namespace aerofuse {

enum class ClusterMode { GnssDynamic, FixedTriple };

/// How GNSS availability selects the clustering regime.
///   Auto    - dynamic when every candidate frame has a prior, triples otherwise
///   Dynamic - GNSS required; a missing prior is an error
///   Triple  - always fixed triples
enum class GnssMode { Auto, Dynamic, Triple };

std::string_view to_string(ClusterMode mode) noexcept;
std::string_view to_string(GnssMode mode) noexcept;
GnssMode parse_gnss_mode(std::string_view text);

struct ClusterPolicy {
  double overlap_threshold = 0.10;
  int max_cluster_size = 10;
  GnssMode gnss_mode = GnssMode::Auto;
  double ground_elevation = 0.0;  ///< plane used for footprints, meters

  void validate() const;
};

struct Cluster {
  std::vector<FrameId> frame_ids;
  int representative_index = 1;  ///< m = floor(L / 2)
  std::array<FrameId, 3> ba_window{};
  ClusterMode mode = ClusterMode::FixedTriple;
  /// Set when the dynamic regime was requested but coverage was too thin
  /// (InsufficientOverlap) and the cluster degraded to a triple.
  bool overlap_warning = false;

  int size() const { return static_cast<int>(frame_ids.size()); }
  FrameId representative() const { return frame_ids[representative_index]; }
};

/// Builds a cluster over consecutive frame ids, filling m and the BA window.
Cluster make_cluster(std::vector<FrameId> frame_ids, ClusterMode mode);

struct ClusterStep {
  Cluster cluster;
  std::size_t consumed = 0;  ///< stream advance; the last member starts the next cluster
};

/// Forms one cluster from the head of `stream` (first unconsumed frame first).
/// When `stream_closed` is false and the cluster could still grow, throws
/// InsufficientFrames so the caller can wait for more frames.
ClusterStep form_cluster(std::span<const Frame> stream, const ClusterPolicy& policy,
                         bool stream_closed = true);

/// The three frames (m-1, m, m+1); the middle one is the representative frame.
std::array<FrameId, 3> select_ba_window(const Cluster& cluster);

/// Clusters a complete (closed) stream. Every frame belongs to at least one
/// cluster: when fewer than three frames remain after the last full cluster
/// and some are uncovered, a trailing triple ending at the last frame is added.
std::vector<Cluster> form_clusters(std::span<const Frame> frames, const ClusterPolicy& policy);

}  // namespace aerofuse
