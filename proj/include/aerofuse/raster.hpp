#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace aerofuse {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB image, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  Rgb at(int u, int v) const {
    const std::size_t i = (static_cast<std::size_t>(v) * width + u) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int u, int v, const Rgb& c) {
    const std::size_t i = (static_cast<std::size_t>(v) * width + u) * 3;
    data[i] = c[0];
    data[i + 1] = c[1];
    data[i + 2] = c[2];
  }
};

}  // namespace aerofuse
