#pragma once

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bpeq/reader_study.hpp"
#include "bpeq/volume_io.hpp"
#include "test_support.hpp"

namespace bpeq::testing {

// Distinctive labels so a leak is easy to spot in any response body.
inline constexpr const char* kMethodA = "deepsegnet";
inline constexpr const char* kMethodB = "fuzzycmeans";
inline constexpr const char* kToken = "s3cret-study-token";

// Two cases of 16x12x5 voxels. Method A's mask is a box, method B's a
// smaller box; study.json sits in `root`.
inline std::filesystem::path write_study(const std::filesystem::path& root, std::uint64_t seed = 7) {
  namespace fs = std::filesystem;
  nlohmann::json cases = nlohmann::json::array();
  const Geometry g = geometry({16, 12, 5});
  for (const char* id : {"alpha", "beta"}) {
    fs::create_directories(root / id);
    write_volume(volume_from(g, [](auto x, auto y, auto z) { return 10.0 * x + y + z; }), root / id / "img.nii");
    write_mask(mask_where(g, [](auto x, auto y, auto) { return x >= 2 && x < 10 && y >= 2 && y < 9; }),
               root / id / "a.nii");
    write_mask(mask_where(g, [](auto x, auto y, auto) { return x >= 4 && x < 8 && y >= 4 && y < 7; }),
               root / id / "b.nii");
    cases.push_back({{"case_id", id},
                     {"original", std::string(id) + "/img.nii"},
                     {"segmentations", {{kMethodA, std::string(id) + "/a.nii"}, {kMethodB, std::string(id) + "/b.nii"}}}});
  }
  const nlohmann::json cfg = {{"seed", seed}, {"token", kToken}, {"store", "scores.jsonl"}, {"cases", cases}};
  std::ofstream(root / "study.json") << cfg.dump(2);
  return root / "study.json";
}

inline nlohmann::json score_json(const std::string& case_id, const std::string& reader, int middle, int right,
                                 const char* preference = nullptr, bool middle_bad = false, bool right_bad = false) {
  nlohmann::json j = {{"case_id", case_id},
                      {"reader_id", reader},
                      {"middle", {{"score", middle}, {"unacceptable_slice", middle_bad}}},
                      {"right", {{"score", right}, {"unacceptable_slice", right_bad}}}};
  if (preference != nullptr) j["preference"] = preference;
  return j;
}

}  // namespace bpeq::testing
