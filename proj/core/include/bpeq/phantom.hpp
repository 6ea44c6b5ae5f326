#pragma once

#include <cstdint>

#include "bpeq/volume.hpp"

namespace bpeq {

// Synthetic bilateral breast DCE exam: two ellipsoidal breasts of fat, a
// rectangular FGT slab inside each, and a bright chest block positioned
// inside the default chest-cavity ellipse. In S1, FGT voxels in the low-z
// part of each slab (enhancing_fraction of its extent) enhance by
// enhancement_pct; everything else is unenhanced.
struct PhantomSpec {
  Index3 dims{128, 128, 128};
  Vec3 spacing{1.0, 1.0, 1.0};
  float fat_intensity = 100.0F;
  float fgt_to_fat_ratio = 3.0F;
  float chest_intensity = 150.0F;
  double enhancement_pct = 80.0;
  // Slab half-width as a fraction of nx, and the fraction of the slab's z
  // extent (from its low end) that enhances.
  double fgt_half_width = 0.1;
  double enhancing_fraction = 0.5;
  double noise_sigma = 2.0;
  std::uint64_t seed = 1;
  bool chest = true;
  // In-plane shift (mm) applied to S1 to mimic patient motion.
  double motion_tx = 0.0;
  double motion_ty = 0.0;
};

struct Phantom {
  Volume3D s0;
  Volume3D s1;
  Mask3D breast;
  Mask3D fgt;
  Mask3D enhancing;  // ground-truth BPE region
};

Phantom make_breast_phantom(const PhantomSpec& spec = {});

}  // namespace bpeq
