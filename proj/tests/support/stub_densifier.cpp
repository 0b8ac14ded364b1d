// External densifier worker used by the tests.
//
//   stub_densifier [--mode nearest|bad|silent|sleep|nodone] <request-dir>
//
// nearest: fills every pixel with the depth of the closest anchor (BFS order).
// bad:     same, scaled by 1.05 so anchor agreement fails.
// silent:  exits without writing anything.
// sleep:   waits 30 s before answering.
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "aerofuse/io.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  std::string mode = "nearest";
  fs::path dir;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--mode" && i + 1 < argc) {
      mode = argv[++i];
    } else {
      dir = a;
    }
  }
  if (dir.empty()) {
    std::cerr << "usage: stub_densifier [--mode m] <dir>\n";
    return 2;
  }
  if (mode == "silent") return 0;
  if (mode == "sleep") std::this_thread::sleep_for(std::chrono::seconds(30));

  try {
    const aerofuse::AnchorMap anchor = aerofuse::io::read_sdepth(dir / "anchor.sdepth");
    const int w = anchor.width;
    const int h = anchor.height;
    std::vector<float> value(static_cast<std::size_t>(w) * h, std::numeric_limits<float>::quiet_NaN());
    std::deque<std::pair<int, int>> queue;
    const float scale = mode == "bad" ? 1.05f : 1.0f;
    for (const auto& [key, cell] : anchor.cells) {
      value[static_cast<std::size_t>(key.first) * w + key.second] = static_cast<float>(cell.depth) * scale;
      queue.emplace_back(key.second, key.first);
    }
    while (!queue.empty()) {
      const auto [u, v] = queue.front();
      queue.pop_front();
      const float z = value[static_cast<std::size_t>(v) * w + u];
      const int du[] = {1, -1, 0, 0};
      const int dv[] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nu = u + du[k];
        const int nv = v + dv[k];
        if (nu < 0 || nv < 0 || nu >= w || nv >= h) continue;
        float& slot = value[static_cast<std::size_t>(nv) * w + nu];
        if (!std::isnan(slot)) continue;
        slot = z;
        queue.emplace_back(nu, nv);
      }
    }
    aerofuse::io::write_fdepth(dir / "depth.fdepth", {w, h, std::move(value)});
    if (mode != "nodone") std::ofstream(dir / "done").flush();
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
