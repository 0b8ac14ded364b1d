#include "aerofuse/clustering.hpp"

#include <algorithm>
#include <string>

#include "aerofuse/error.hpp"

namespace aerofuse {

namespace {

// Overlaps equal to the threshold (up to round-off) count as having dropped below it.
constexpr double kOverlapEpsilon = 1e-9;

Cluster triple_from(std::span<const Frame> stream, bool warning) {
  Cluster c = make_cluster({stream[0].frame_id, stream[1].frame_id, stream[2].frame_id},
                           ClusterMode::FixedTriple);
  c.overlap_warning = warning;
  return c;
}

}  // namespace

std::string_view to_string(ClusterMode mode) noexcept {
  return mode == ClusterMode::GnssDynamic ? "gnss_dynamic" : "fixed_triple";
}

std::string_view to_string(GnssMode mode) noexcept {
  switch (mode) {
    case GnssMode::Auto: return "auto";
    case GnssMode::Dynamic: return "dynamic";
    case GnssMode::Triple: return "triple";
  }
  return "auto";
}

GnssMode parse_gnss_mode(std::string_view text) {
  if (text == "auto") return GnssMode::Auto;
  if (text == "dynamic") return GnssMode::Dynamic;
  if (text == "triple") return GnssMode::Triple;
  throw Error(ErrorCode::ConfigError, "unknown gnss-mode '" + std::string(text) + "'");
}

void ClusterPolicy::validate() const {
  if (!(overlap_threshold > 0.0 && overlap_threshold < 1.0))
    throw Error(ErrorCode::ConfigError, "overlap-threshold must lie in (0, 1)");
  if (max_cluster_size < 3) throw Error(ErrorCode::ConfigError, "max-cluster-size must be >= 3");
}

Cluster make_cluster(std::vector<FrameId> frame_ids, ClusterMode mode) {
  if (frame_ids.size() < 3) throw Error(ErrorCode::InvalidArgument, "a cluster needs at least 3 frames");
  Cluster c;
  c.frame_ids = std::move(frame_ids);
  c.mode = mode;
  c.representative_index = c.size() / 2;
  const auto m = static_cast<std::size_t>(c.representative_index);
  c.ba_window = {c.frame_ids[m - 1], c.frame_ids[m], c.frame_ids[m + 1]};
  return c;
}

std::array<FrameId, 3> select_ba_window(const Cluster& cluster) {
  const auto m = static_cast<std::size_t>(cluster.size() / 2);
  return {cluster.frame_ids[m - 1], cluster.frame_ids[m], cluster.frame_ids[m + 1]};
}

ClusterStep form_cluster(std::span<const Frame> stream, const ClusterPolicy& policy,
                         bool stream_closed) {
  policy.validate();
  if (stream.size() < 3) {
    throw Error(ErrorCode::InsufficientFrames,
                std::to_string(stream.size()) + " frame(s) left, a cluster needs 3");
  }

  auto has_prior = [](const Frame& f) { return f.gnss_prior.has_value(); };
  bool dynamic = policy.gnss_mode != GnssMode::Triple;
  if (dynamic && !std::all_of(stream.begin(), stream.begin() + 3, has_prior)) {
    if (policy.gnss_mode == GnssMode::Dynamic)
      throw Error(ErrorCode::MissingPrior, "gnss-mode=dynamic but a frame has no GNSS prior");
    dynamic = false;
  }
  if (!dynamic) return {triple_from(stream, false), 2};

  const GroundPolygon first = footprint(stream[0], policy.ground_elevation);
  if (overlap_ratio(first, footprint(stream[1], policy.ground_elevation)) <=
      policy.overlap_threshold + kOverlapEpsilon) {
    return {triple_from(stream, true), 2};
  }

  // The first three frames always form the minimal cluster; further frames are
  // appended while their overlap with the first frame stays above threshold.
  std::vector<FrameId> members = {stream[0].frame_id, stream[1].frame_id, stream[2].frame_id};
  const auto cap = static_cast<std::size_t>(policy.max_cluster_size);
  std::size_t j = 3;
  for (; members.size() < cap; ++j) {
    if (j >= stream.size()) {
      if (!stream_closed)
        throw Error(ErrorCode::InsufficientFrames, "cluster still open, waiting for frames");
      break;
    }
    if (!has_prior(stream[j])) {
      if (policy.gnss_mode == GnssMode::Dynamic)
        throw Error(ErrorCode::MissingPrior, "gnss-mode=dynamic but a frame has no GNSS prior");
      return {triple_from(stream, false), 2};
    }
    const double overlap = overlap_ratio(first, footprint(stream[j], policy.ground_elevation));
    if (overlap <= policy.overlap_threshold + kOverlapEpsilon) break;
    members.push_back(stream[j].frame_id);
  }
  const std::size_t consumed = members.size() - 1;
  return {make_cluster(std::move(members), ClusterMode::GnssDynamic), consumed};
}

std::vector<Cluster> form_clusters(std::span<const Frame> frames, const ClusterPolicy& policy) {
  if (frames.size() < 3) throw Error(ErrorCode::InsufficientFrames, "a mission needs at least 3 frames");
  std::vector<Cluster> clusters;
  std::size_t cursor = 0;
  while (true) {
    const std::size_t remaining = frames.size() - cursor;
    if (remaining < 3) {
      // Frames after `cursor` are not yet in any cluster.
      if (cursor + 1 < frames.size()) {
        clusters.push_back(triple_from(frames.subspan(frames.size() - 3), false));
      }
      break;
    }
    ClusterStep step = form_cluster(frames.subspan(cursor), policy, true);
    cursor += step.consumed;
    clusters.push_back(std::move(step.cluster));
    if (cursor + 1 >= frames.size()) break;
  }
  return clusters;
}

}  // namespace aerofuse
