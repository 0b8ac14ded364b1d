#include "aerofuse/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "aerofuse/error.hpp"

namespace aerofuse {

AnchorMap build_anchor_map(const BaSolution& solution, const Frame& representative) {
  auto it = solution.poses.find(representative.frame_id);
  if (it == solution.poses.end())
    throw Error(ErrorCode::InvalidArgument,
                "representative frame " + std::to_string(representative.frame_id) + " has no optimized pose");
  representative.intrinsics.validate();

  AnchorMap map;
  map.frame_id = representative.frame_id;
  map.width = representative.intrinsics.width;
  map.height = representative.intrinsics.height;
  map.pose = it->second;
  map.intrinsics = representative.intrinsics;

  const auto& K = map.intrinsics;
  for (const auto& [id, tp] : solution.points) {
    const Vec3 X = map.pose.transform(tp.position);
    if (!(X.z() > 0.0)) continue;
    const double u = K.fx * X.x() / X.z() + K.cx;
    const double v = K.fy * X.y() / X.z() + K.cy;
    const double col = std::round(u);
    const double row = std::round(v);
    if (!(col >= 0.0 && col < map.width && row >= 0.0 && row < map.height)) continue;
    const PixelKey key{static_cast<int>(row), static_cast<int>(col)};
    auto [cell, inserted] = map.cells.try_emplace(key, AnchorCell{X.z(), tp.uncertainty, id});
    if (!inserted && X.z() < cell->second.depth) cell->second = AnchorCell{X.z(), tp.uncertainty, id};
  }
  if (map.cells.empty())
    throw Error(ErrorCode::EmptyAnchor,
                "no tie-point projects into frame " + std::to_string(representative.frame_id));
  return map;
}

double anchor_coverage(const AnchorMap& map, int tile) {
  if (tile <= 0) throw Error(ErrorCode::InvalidArgument, "tile size must be positive");
  if (map.width <= 0 || map.height <= 0) return 0.0;
  const int nx = (map.width + tile - 1) / tile;
  const int ny = (map.height + tile - 1) / tile;
  std::vector<char> hit(static_cast<std::size_t>(nx) * ny, 0);
  for (const auto& [key, cell] : map.cells) hit[static_cast<std::size_t>(key.first / tile) * nx + key.second / tile] = 1;
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(hit.size());
}

double anchor_grid_coverage(const AnchorMap& map, int nx, int ny) {
  if (nx <= 0 || ny <= 0) throw Error(ErrorCode::InvalidArgument, "grid must be non-empty");
  if (map.width <= 0 || map.height <= 0) return 0.0;
  std::vector<char> hit(static_cast<std::size_t>(nx) * ny, 0);
  for (const auto& [key, cell] : map.cells) {
    const int gx = std::min(nx - 1, static_cast<int>(static_cast<long>(key.second) * nx / map.width));
    const int gy = std::min(ny - 1, static_cast<int>(static_cast<long>(key.first) * ny / map.height));
    hit[static_cast<std::size_t>(gy) * nx + gx] = 1;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(hit.size());
}

int reject_depth_outliers(AnchorMap& map, const DepthOutlierConfig& config) {
  if (config.neighbors < 1 || !(config.relative_tolerance > 0.0))
    throw Error(ErrorCode::InvalidArgument, "invalid depth outlier configuration");
  struct Entry {
    PixelKey key;
    double depth;
  };
  std::vector<Entry> cells;
  cells.reserve(map.cells.size());
  for (const auto& [key, cell] : map.cells) cells.push_back({key, cell.depth});
  const auto k = static_cast<std::size_t>(config.neighbors);
  if (cells.size() <= k) return 0;

  std::vector<PixelKey> rejected;
  std::vector<std::pair<long, double>> dist(cells.size() - 1);
  std::vector<double> depths;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j == i) continue;
      const long dr = cells[j].key.first - cells[i].key.first;
      const long dc = cells[j].key.second - cells[i].key.second;
      dist[n++] = {dr * dr + dc * dc, cells[j].depth};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    depths.clear();
    for (std::size_t j = 0; j < k; ++j) depths.push_back(dist[j].second);
    std::sort(depths.begin(), depths.end());
    const double med = k % 2 ? depths[k / 2] : 0.5 * (depths[k / 2 - 1] + depths[k / 2]);
    if (std::abs(cells[i].depth - med) > config.relative_tolerance * med) rejected.push_back(cells[i].key);
  }
  for (const auto& key : rejected) map.cells.erase(key);
  return static_cast<int>(rejected.size());
}

}  // namespace aerofuse
