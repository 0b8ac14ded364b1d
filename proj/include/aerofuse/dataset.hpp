#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aerofuse/bundle_adjustment.hpp"
#include "aerofuse/geometry.hpp"

namespace aerofuse {

/// Ground marker bound to a track; the truth position is optional.
struct MarkerSpec {
  std::string marker_id;
  TrackId track_id = 0;
  std::optional<Vec3> truth;
};

/// In-memory form of an input directory.
struct Dataset {
  std::vector<Frame> frames;
  std::vector<Track> tracks;
  std::vector<MarkerSpec> markers;
};

/// Line-numbered input problem, e.g. "tracks.txt:12: pixel u=-3 outside [0, 1200)".
struct Diagnostic {
  std::string file;
  int line = 0;
  std::string message;

  std::string str() const;
};

namespace io {

/// frames.csv columns: frame_id,timestamp_s,fx,fy,cx,cy,width,height,
/// gnss_x,gnss_y,gnss_z,gnss_qw,gnss_qx,gnss_qy,gnss_qz,gnss_sigma_m.
/// The position is the camera centre and the quaternion the camera-to-world
/// attitude; the GNSS fields are empty when the frame has no prior.
void write_frames_csv(const std::filesystem::path& path, const std::vector<Frame>& frames);
/// tracks.txt: "track_id frame_id u_px v_px" per observation.
void write_tracks(const std::filesystem::path& path, const std::vector<Track>& tracks);
/// markers.csv: "marker_id,track_id[,x,y,z]" with a header line.
void write_markers(const std::filesystem::path& path, const std::vector<MarkerSpec>& markers);

std::vector<Frame> read_frames_csv(const std::filesystem::path& path, std::vector<Diagnostic>& diags);
std::vector<Track> read_tracks(const std::filesystem::path& path, const std::vector<Frame>& frames,
                               std::vector<Diagnostic>& diags);
std::vector<MarkerSpec> read_markers(const std::filesystem::path& path, std::vector<Diagnostic>& diags);

}  // namespace io

/// Loads and schema-checks an input directory (frames.csv, tracks.txt,
/// optional markers.csv and images/frame_<id>.ppm). Throws InputFormatError
/// carrying every diagnostic.
Dataset validate_inputs(const std::filesystem::path& dir, bool load_images = true);

}  // namespace aerofuse
