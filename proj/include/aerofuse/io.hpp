#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aerofuse/anchor.hpp"
#include "aerofuse/raster.hpp"

namespace aerofuse::io {

namespace fs = std::filesystem;

/// Sparse depth text format:
///   SDEPTH 1
///   width height
///   u v depth_m sigma_m      (one line per cell)
void write_sdepth(const fs::path& path, const AnchorMap& map);
/// Reads cells into `map` (dimensions and cells only).
AnchorMap read_sdepth(const fs::path& path);

struct FloatRaster {
  int width = 0;
  int height = 0;
  std::vector<float> values;  ///< row-major, NaN = invalid
};

/// Dense depth: "FDEPTH 1\n", "width height\n", then float32 little-endian row-major.
void write_fdepth(const fs::path& path, const FloatRaster& raster);
FloatRaster read_fdepth(const fs::path& path);

/// Binary PPM (P6, maxval 255).
void write_ppm(const fs::path& path, const RgbImage& image);
RgbImage read_ppm(const fs::path& path);

/// Camera file of the external densifier: "fx fy cx cy", the 9 rotation
/// entries row-major, then the 3 translation entries, one group per line.
void write_camera(const fs::path& path, const CameraIntrinsics& K, const Pose& pose);

/// Writes `content` to `path` through a temporary file and rename.
void write_text_atomic(const fs::path& path, const std::string& content);

}  // namespace aerofuse::io
