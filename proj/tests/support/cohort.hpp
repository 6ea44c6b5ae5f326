#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bpeq/phantom.hpp"
#include "bpeq/volume_io.hpp"

namespace bpeq::testing {

struct CohortOptions {
  int cases = 3;
  std::int64_t size = 40;
  double noise = 1.0;
  std::uint64_t seed = 1;
  bool ground_truth = false;
};

// Phantom cases caseNN/{s0,s1}.nii plus manifest.json under `root`. Cases
// differ in FGT width and enhancing share; grades follow the share.
inline std::filesystem::path write_cohort(const std::filesystem::path& root, const CohortOptions& o = {}) {
  namespace fs = std::filesystem;
  nlohmann::json manifest = {{"cases", nlohmann::json::array()}};
  static const char* kGrades[] = {"minimal", "mild", "moderate", "marked"};
  for (int i = 0; i < o.cases; ++i) {
    PhantomSpec spec;
    spec.dims = {o.size, o.size, o.size};
    spec.noise_sigma = o.noise;
    spec.seed = o.seed * 100 + static_cast<std::uint64_t>(i);
    spec.fgt_half_width = 0.06 + 0.02 * (i % 4);
    spec.enhancing_fraction = 0.2 + 0.6 * static_cast<double>(i) / std::max(1, o.cases - 1);
    const Phantom ph = make_breast_phantom(spec);
    const std::string id = "case" + std::to_string(10 + i);
    fs::create_directories(root / id);
    write_volume(ph.s0, root / id / "s0.nii");
    write_volume(ph.s1, root / id / "s1.nii");
    if (o.ground_truth) {
      write_mask(ph.fgt, root / id / "gt_fgt.nii");
      write_mask(ph.enhancing, root / id / "gt_bpe.nii");
    }
    manifest["cases"].push_back({{"case_id", id},
                                 {"s0", id + "/s0.nii"},
                                 {"s1", id + "/s1.nii"},
                                 {"qualitative_bpe", kGrades[std::min(3, static_cast<int>(spec.enhancing_fraction * 4))]}});
  }
  const fs::path path = root / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << "\n";
  return path;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace bpeq::testing
