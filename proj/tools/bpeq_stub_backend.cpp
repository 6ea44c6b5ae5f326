// Minimal model for the external-process backend protocol:
//   bpeq_stub_backend [--mode breast|fgt|fail] --in <dir> --out <dir>
// breast: ch0 = 1 where input ch0 > 0.
// fgt:    ch0 (FGT) = 1 where input ch0 > 1 and ch1 > 0.5; ch1 (vessel) = 0.
// fail:   exits with status 3.

#include <cstring>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bpeq/volume_io.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  std::string mode = "breast";
  fs::path in_dir;
  fs::path out_dir;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    if (key == "--mode") {
      mode = argv[i + 1];
    } else if (key == "--in") {
      in_dir = argv[i + 1];
    } else if (key == "--out") {
      out_dir = argv[i + 1];
    } else {
      std::cerr << "unknown argument " << key << "\n";
      return 2;
    }
  }
  if (mode == "fail") return 3;
  if (in_dir.empty() || out_dir.empty()) {
    std::cerr << "usage: bpeq_stub_backend [--mode breast|fgt|fail] --in <dir> --out <dir>\n";
    return 2;
  }
  try {
    std::vector<bpeq::Volume3D> channels;
    while (fs::exists(in_dir / ("ch" + std::to_string(channels.size()) + ".json"))) {
      channels.push_back(bpeq::read_volume(in_dir / ("ch" + std::to_string(channels.size()) + ".json")));
    }
    if (channels.empty()) {
      std::cerr << "no input channels\n";
      return 2;
    }
    const auto& g = channels[0].geometry();
    const auto n = static_cast<std::size_t>(g.count());
    std::vector<float> first(n, 0.0F);
    std::vector<float> second(n, 0.0F);
    for (std::size_t i = 0; i < n; ++i) {
      if (mode == "breast") {
        first[i] = channels[0][static_cast<std::int64_t>(i)] > 0.0F ? 1.0F : 0.0F;
      } else {
        const bool in_breast = channels.size() < 2 || channels[1][static_cast<std::int64_t>(i)] > 0.5F;
        first[i] = in_breast && channels[0][static_cast<std::int64_t>(i)] > 1.0F ? 1.0F : 0.0F;
      }
    }
    bpeq::write_volume(bpeq::Volume3D(g, std::move(first)), out_dir / "ch0.json");
    if (mode == "fgt") {
      bpeq::write_volume(bpeq::Volume3D(g, std::move(second)), out_dir / "ch1.json");
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
