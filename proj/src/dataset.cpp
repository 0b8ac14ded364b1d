#include "aerofuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "aerofuse/error.hpp"
#include "aerofuse/io.hpp"

namespace aerofuse {

std::string Diagnostic::str() const { return file + ":" + std::to_string(line) + ": " + message; }

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

template <typename T>
bool parse(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b == e) return false;
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

}  // namespace

namespace io {

void write_frames_csv(const std::filesystem::path& path, const std::vector<Frame>& frames) {
  std::ostringstream os;
  os << "frame_id,timestamp_s,fx,fy,cx,cy,width,height,gnss_x,gnss_y,gnss_z,gnss_qw,gnss_qx,gnss_qy,gnss_qz,"
        "gnss_sigma_m\n";
  for (const auto& f : frames) {
    const auto& K = f.intrinsics;
    os << f.frame_id << ',' << num(f.timestamp) << ',' << num(K.fx) << ',' << num(K.fy) << ',' << num(K.cx) << ','
       << num(K.cy) << ',' << K.width << ',' << K.height;
    if (f.gnss_prior) {
      const Vec3 c = f.gnss_prior->pose.center();
      Eigen::Quaterniond q(f.gnss_prior->pose.rotation.transpose());
      if (q.w() < 0.0) q.coeffs() = -q.coeffs();
      os << ',' << num(c.x()) << ',' << num(c.y()) << ',' << num(c.z()) << ',' << num(q.w()) << ',' << num(q.x())
         << ',' << num(q.y()) << ',' << num(q.z()) << ',' << num(f.gnss_prior->position_sigma) << '\n';
    } else {
      os << ",,,,,,,,\n";
    }
  }
  auto out = open_out(path);
  out << os.str();
}

void write_tracks(const std::filesystem::path& path, const std::vector<Track>& tracks) {
  std::ostringstream os;
  for (const auto& t : tracks)
    for (const auto& o : t.observations)
      os << t.track_id << ' ' << o.frame_id << ' ' << num(o.pixel.x()) << ' ' << num(o.pixel.y()) << '\n';
  auto out = open_out(path);
  out << os.str();
}

void write_markers(const std::filesystem::path& path, const std::vector<MarkerSpec>& markers) {
  std::ostringstream os;
  os << "marker_id,track_id,x,y,z\n";
  for (const auto& m : markers) {
    os << m.marker_id << ',' << m.track_id;
    if (m.truth) os << ',' << num(m.truth->x()) << ',' << num(m.truth->y()) << ',' << num(m.truth->z());
    os << '\n';
  }
  auto out = open_out(path);
  out << os.str();
}

std::vector<Frame> read_frames_csv(const std::filesystem::path& path, std::vector<Diagnostic>& diags) {
  auto in = open_in(path);
  const std::string file = path.filename().string();
  std::vector<Frame> frames;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) {
    diags.push_back({file, 1, "missing header line"});
    return frames;
  }
  ++lineno;
  if (split(line, ',').size() != 16 || line.rfind("frame_id", 0) != 0)
    diags.push_back({file, lineno, "header must list the 16 frame columns"});
  std::set<FrameId> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != 16) {
      diags.push_back({file, lineno, "expected 16 fields, found " + std::to_string(f.size())});
      continue;
    }
    Frame fr;
    auto& K = fr.intrinsics;
    if (!parse(f[0], fr.frame_id) || !parse(f[1], fr.timestamp) || !parse(f[2], K.fx) || !parse(f[3], K.fy) ||
        !parse(f[4], K.cx) || !parse(f[5], K.cy) || !parse(f[6], K.width) || !parse(f[7], K.height)) {
      diags.push_back({file, lineno, "malformed number in frame or camera fields"});
      continue;
    }
    try {
      K.validate();
    } catch (const Error& e) {
      diags.push_back({file, lineno, e.what()});
      continue;
    }
    const bool any = std::any_of(f.begin() + 8, f.end(), [](const std::string& s) { return !s.empty(); });
    const bool all = std::all_of(f.begin() + 8, f.end(), [](const std::string& s) { return !s.empty(); });
    if (any && !all) {
      diags.push_back({file, lineno, "GNSS fields must be all present or all empty"});
      continue;
    }
    if (all) {
      double g[8];
      bool ok = true;
      for (int i = 0; i < 8; ++i) ok = ok && parse(f[8 + i], g[i]);
      if (!ok) {
        diags.push_back({file, lineno, "malformed number in GNSS fields"});
        continue;
      }
      Eigen::Quaterniond q(g[3], g[4], g[5], g[6]);
      if (std::abs(q.norm() - 1.0) > 1e-3) {
        diags.push_back({file, lineno, "GNSS quaternion is not unit length"});
        continue;
      }
      if (!(g[7] > 0.0)) {
        diags.push_back({file, lineno, "GNSS sigma must be positive"});
        continue;
      }
      q.normalize();
      fr.gnss_prior = GnssPrior{Pose::from_center(q.toRotationMatrix(), Vec3(g[0], g[1], g[2])), g[7]};
    }
    if (!ids.insert(fr.frame_id).second) {
      diags.push_back({file, lineno, "duplicate frame_id " + std::to_string(fr.frame_id)});
      continue;
    }
    if (!frames.empty() && !(fr.timestamp > frames.back().timestamp)) {
      diags.push_back({file, lineno, "timestamp does not increase"});
      continue;
    }
    if (!frames.empty() && !(fr.frame_id > frames.back().frame_id)) {
      diags.push_back({file, lineno, "frame_id does not increase"});
      continue;
    }
    frames.push_back(std::move(fr));
  }
  if (frames.empty()) diags.push_back({file, lineno, "no frames"});
  return frames;
}

std::vector<Track> read_tracks(const std::filesystem::path& path, const std::vector<Frame>& frames,
                               std::vector<Diagnostic>& diags) {
  auto in = open_in(path);
  const std::string file = path.filename().string();
  std::map<FrameId, std::size_t> frame_index;
  for (std::size_t i = 0; i < frames.size(); ++i) frame_index[frames[i].frame_id] = i;
  std::map<TrackId, std::vector<std::pair<std::size_t, Vec2>>> obs;
  std::set<std::pair<TrackId, FrameId>> seen;
  std::string line;
  int lineno = 0;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    TrackId t = 0;
    FrameId fid = 0;
    double u = 0.0, v = 0.0;
    if (f.size() != 4 || !parse(f[0], t) || !parse(f[1], fid) || !parse(f[2], u) || !parse(f[3], v)) {
      diags.push_back({file, lineno, "expected 'track_id frame_id u_px v_px'"});
      continue;
    }
    auto it = frame_index.find(fid);
    if (it == frame_index.end()) {
      diags.push_back({file, lineno, "unknown frame " + std::to_string(fid)});
      continue;
    }
    const auto& K = frames[it->second].intrinsics;
    if (!(u >= 0.0 && u < K.width)) {
      diags.push_back({file, lineno, "pixel u=" + f[2] + " outside [0, " + std::to_string(K.width) + ")"});
      continue;
    }
    if (!(v >= 0.0 && v < K.height)) {
      diags.push_back({file, lineno, "pixel v=" + f[3] + " outside [0, " + std::to_string(K.height) + ")"});
      continue;
    }
    if (!seen.insert({t, fid}).second) {
      diags.push_back({file, lineno,
                       "duplicate observation of track " + std::to_string(t) + " in frame " + std::to_string(fid)});
      continue;
    }
    obs[t].emplace_back(it->second, Vec2(u, v));
    ++count;
  }
  if (count == 0) diags.push_back({file, lineno, "no observations"});
  std::vector<Track> tracks;
  tracks.reserve(obs.size());
  for (auto& [id, list] : obs) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Track t;
    t.track_id = id;
    for (const auto& [idx, px] : list) t.observations.push_back({frames[idx].frame_id, px});
    tracks.push_back(std::move(t));
  }
  return tracks;
}

std::vector<MarkerSpec> read_markers(const std::filesystem::path& path, std::vector<Diagnostic>& diags) {
  auto in = open_in(path);
  const std::string file = path.filename().string();
  std::vector<MarkerSpec> markers;
  std::string line;
  int lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (lineno == 1 && line.rfind("marker_id", 0) == 0) continue;
    const auto f = split(line, ',');
    MarkerSpec m;
    m.marker_id = f[0];
    if ((f.size() != 2 && f.size() != 5) || m.marker_id.empty() || !parse(f[1], m.track_id)) {
      diags.push_back({file, lineno, "expected 'marker_id,track_id[,x,y,z]'"});
      continue;
    }
    if (f.size() == 5) {
      Vec3 p;
      if (!parse(f[2], p.x()) || !parse(f[3], p.y()) || !parse(f[4], p.z())) {
        diags.push_back({file, lineno, "malformed marker position"});
        continue;
      }
      m.truth = p;
    }
    if (!ids.insert(m.marker_id).second) {
      diags.push_back({file, lineno, "duplicate marker " + m.marker_id});
      continue;
    }
    markers.push_back(std::move(m));
  }
  return markers;
}

}  // namespace io

Dataset validate_inputs(const std::filesystem::path& dir, bool load_images) {
  namespace fs = std::filesystem;
  std::vector<Diagnostic> diags;
  for (const char* name : {"frames.csv", "tracks.txt"})
    if (!fs::is_regular_file(dir / name)) diags.push_back({name, 0, "missing file"});
  auto fail = [&]() {
    std::string msg = std::to_string(diags.size()) + " input problem(s)";
    for (std::size_t i = 0; i < diags.size() && i < 200; ++i) msg += "\n  " + diags[i].str();
    if (diags.size() > 200) msg += "\n  ...";
    throw Error(ErrorCode::InputFormatError, msg);
  };
  if (!diags.empty()) fail();

  Dataset ds;
  ds.frames = io::read_frames_csv(dir / "frames.csv", diags);
  ds.tracks = io::read_tracks(dir / "tracks.txt", ds.frames, diags);
  if (fs::is_regular_file(dir / "markers.csv")) ds.markers = io::read_markers(dir / "markers.csv", diags);
  if (load_images) {
    for (auto& f : ds.frames) {
      const fs::path p = dir / "images" / ("frame_" + std::to_string(f.frame_id) + ".ppm");
      if (!fs::is_regular_file(p)) continue;
      try {
        auto img = std::make_shared<RgbImage>(io::read_ppm(p));
        if (img->width != f.intrinsics.width || img->height != f.intrinsics.height) {
          diags.push_back({p.filename().string(), 1, "image size differs from the camera"});
          continue;
        }
        f.image = std::move(img);
      } catch (const Error& e) {
        diags.push_back({p.filename().string(), 1, e.what()});
      }
    }
  }
  if (!diags.empty()) fail();
  return ds;
}

}  // namespace aerofuse
