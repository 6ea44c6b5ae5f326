// bpeq_synth: writes a cohort of synthetic breast DCE phantoms plus a
// manifest that the bpeq pipeline can consume directly.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bpeq/phantom.hpp"
#include "bpeq/rng.hpp"
#include "bpeq/volume_io.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic breast DCE phantoms"};
  std::string out;
  int cases = 1;
  std::int64_t size = 128;
  double noise = 2.0;
  double motion = 0.0;
  std::uint64_t seed = 1;
  bool ground_truth = true;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--cases", cases, "Number of cases")->check(CLI::PositiveNumber);
  app.add_option("--size", size, "Edge length of the cubic volume (voxels)")->check(CLI::Range(16, 1024));
  app.add_option("--noise", noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
  app.add_option("--motion", motion, "Maximum in-plane shift of S1 (mm)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "Cohort seed");
  app.add_flag("!--no-ground-truth", ground_truth, "Skip writing ground-truth masks");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root(out);
    fs::create_directories(root);
    nlohmann::json manifest = {{"cases", nlohmann::json::array()}};
    static const char* kGrades[] = {"minimal", "mild", "moderate", "marked"};
    static const char* kDensity[] = {"fatty", "scattered", "heterogeneously dense", "extremely dense"};

    for (int i = 0; i < cases; ++i) {
      auto gen = bpeq::substream(seed, static_cast<std::uint64_t>(i));
      auto uniform = [&gen]() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };

      bpeq::PhantomSpec spec;
      spec.dims = {size, size, size};
      spec.noise_sigma = noise;
      spec.seed = seed * 1000003ULL + static_cast<std::uint64_t>(i);
      if (cases > 1) {
        spec.fgt_half_width = 0.05 + 0.1 * uniform();
        spec.enhancing_fraction = 0.2 + 0.6 * uniform();
        spec.enhancement_pct = 60.0 + 60.0 * uniform();
      }
      if (motion > 0.0) {
        spec.motion_tx = motion * (2.0 * uniform() - 1.0);
        spec.motion_ty = motion * (2.0 * uniform() - 1.0);
      }
      const bpeq::Phantom ph = bpeq::make_breast_phantom(spec);

      char id[32];
      std::snprintf(id, sizeof id, "case%03d", i + 1);
      const fs::path dir = root / id;
      fs::create_directories(dir);
      bpeq::write_volume(ph.s0, dir / "s0.nii");
      bpeq::write_volume(ph.s1, dir / "s1.nii");
      if (ground_truth) {
        bpeq::write_mask(ph.breast, dir / "gt_breast.nii");
        bpeq::write_mask(ph.fgt, dir / "gt_fgt.nii");
        bpeq::write_mask(ph.enhancing, dir / "gt_bpe.nii");
      }

      // Qualitative grade tracks the enhancing share of the FGT, with a
      // little reader noise so the correlation is not perfect.
      const double share = spec.enhancing_fraction + 0.15 * (uniform() - 0.5);
      const int grade = std::clamp(static_cast<int>(share * 4.0), 0, 3);
      const int density = std::clamp(static_cast<int>((spec.fgt_half_width - 0.05) / 0.1 * 4.0), 0, 3);
      manifest["cases"].push_back({{"case_id", id},
                                   {"s0", std::string(id) + "/s0.nii"},
                                   {"s1", std::string(id) + "/s1.nii"},
                                   {"qualitative_bpe", kGrades[grade]},
                                   {"density_category", kDensity[density]}});
    }
    std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";
    std::cout << "wrote " << cases << " case(s) and " << (root / "manifest.json").string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
