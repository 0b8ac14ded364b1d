#include "aerofuse/io.hpp"

#include <bit>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aerofuse/error.hpp"

namespace aerofuse::io {

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return in;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void expect_magic(std::istream& in, const std::string& magic, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != magic)
    throw Error(ErrorCode::InputFormatError, path.string() + ": expected header '" + magic + "'");
}

}  // namespace

void write_sdepth(const fs::path& path, const AnchorMap& map) {
  std::ostringstream os;
  os << "SDEPTH 1\n" << map.width << ' ' << map.height << '\n';
  for (const auto& [key, cell] : map.cells)
    os << key.second << ' ' << key.first << ' ' << fmt(cell.depth) << ' ' << fmt(cell.uncertainty) << '\n';
  auto out = open_out(path);
  out << os.str();
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

AnchorMap read_sdepth(const fs::path& path) {
  auto in = open_in(path);
  expect_magic(in, "SDEPTH 1", path);
  AnchorMap map;
  std::string line;
  if (!std::getline(in, line) || !(std::istringstream(line) >> map.width >> map.height) || map.width <= 0 ||
      map.height <= 0)
    throw Error(ErrorCode::InputFormatError, path.string() + ":2: bad dimensions");
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int u = 0, v = 0;
    double d = 0.0, s = 0.0;
    if (!(ls >> u >> v >> d >> s) || u < 0 || v < 0 || u >= map.width || v >= map.height || !(d > 0.0))
      throw Error(ErrorCode::InputFormatError, path.string() + ":" + std::to_string(lineno) + ": bad cell");
    map.cells[{v, u}] = AnchorCell{d, s, 0};
  }
  return map;
}

void write_fdepth(const fs::path& path, const FloatRaster& raster) {
  if (raster.values.size() != static_cast<std::size_t>(raster.width) * raster.height)
    throw Error(ErrorCode::DimensionMismatch, "raster size does not match its dimensions");
  auto out = open_out(path);
  out << "FDEPTH 1\n" << raster.width << ' ' << raster.height << '\n';
  std::vector<std::uint32_t> words(raster.values.size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(raster.values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

FloatRaster read_fdepth(const fs::path& path) {
  auto in = open_in(path);
  expect_magic(in, "FDEPTH 1", path);
  FloatRaster r;
  std::string line;
  if (!std::getline(in, line) || !(std::istringstream(line) >> r.width >> r.height) || r.width <= 0 || r.height <= 0)
    throw Error(ErrorCode::InputFormatError, path.string() + ": bad dimensions");
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  std::vector<std::uint32_t> words(n);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(in.gcount()) != n * 4)
    throw Error(ErrorCode::InputFormatError, path.string() + ": truncated raster");
  r.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.values[i] = std::bit_cast<float>(to_little(words[i]));
  return r;
}

void write_ppm(const fs::path& path, const RgbImage& image) {
  if (image.data.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw Error(ErrorCode::DimensionMismatch, "image size does not match its dimensions");
  auto out = open_out(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

RgbImage read_ppm(const fs::path& path) {
  auto in = open_in(path);
  auto token = [&]() {
    std::string t;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw Error(ErrorCode::InputFormatError, path.string() + ": not a binary PPM");
  RgbImage img;
  int maxval = 0;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::InputFormatError, path.string() + ": bad PPM header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw Error(ErrorCode::InputFormatError, path.string() + ": unsupported PPM header");
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.data.size())
    throw Error(ErrorCode::InputFormatError, path.string() + ": truncated pixel data");
  return img;
}

void write_camera(const fs::path& path, const CameraIntrinsics& K, const Pose& pose) {
  std::ostringstream os;
  os << fmt(K.fx) << ' ' << fmt(K.fy) << ' ' << fmt(K.cx) << ' ' << fmt(K.cy) << '\n';
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) os << fmt(pose.rotation(r, c)) << (r == 2 && c == 2 ? '\n' : ' ');
  os << fmt(pose.translation.x()) << ' ' << fmt(pose.translation.y()) << ' ' << fmt(pose.translation.z()) << '\n';
  auto out = open_out(path);
  out << os.str();
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = open_out(tmp);
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace aerofuse::io
