#pragma once

#include <span>

#include "bpeq/volume.hpp"

namespace bpeq {

// In-plane affine (mm) taking a point of the moving image to the fixed image:
//   [x'; y'] = [a11 a12; a21 a22] [x; y] + [tx; ty]
// Coordinates are measured from the in-plane centre of the grid, so the
// linear part rotates/scales about the slice centre.
struct Affine2D {
  double a11 = 1.0;
  double a12 = 0.0;
  double a21 = 0.0;
  double a22 = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  double determinant() const { return a11 * a22 - a12 * a21; }
  // Throws InvalidArgument unless determinant() > 0.
  void validate() const;
  Affine2D inverse() const;
  std::array<double, 2> apply(double x, double y) const {
    return {a11 * x + a12 * y + tx, a21 * x + a22 * y + ty};
  }
  // Largest absolute difference between parameters.
  double max_abs_diff(const Affine2D& other) const;
};

struct RegistrationParams {
  int levels = 3;
  int max_iters_per_level = 200;
  double convergence_tol = 1e-6;
  // A solution is accepted only if the registered moving image correlates
  // with the fixed image at least this strongly; otherwise identity is
  // returned with the warning flag set.
  double min_structure_correlation = 0.1;
  // Scale c of the robust loss as a fraction of the fixed image's P1-P99
  // range. Residuals well above c (contrast uptake) stop contributing more
  // than c^2 each. 0 gives plain mean squared difference.
  double robust_scale = 0.1;
};

struct PreprocParams {
  double target_spacing = 1.0;
  double cap_low_pct = 0.1;
  double cap_high_pct = 99.9;
  RegistrationParams registration;

  void validate() const;
};

// Trilinear resampling onto an isotropic grid covering the same field of
// view. Output dims are round(n*s/t) (at least 1); samples falling outside
// the input use clamped coordinates.
Volume3D resample_isotropic(const Volume3D& vol, double target_spacing);

struct RegistrationResult {
  Affine2D transform;
  Volume3D registered;  // moving resampled into the fixed frame
  bool warning = false;  // optimisation failed to find an acceptable improvement
  double objective_identity = 0.0;  // loss at identity
  double objective_final = 0.0;  // loss of the returned transform
  int evaluations = 0;
};

// One in-plane affine shared by all slices, minimising the mean robust
// squared intensity difference c^2 d^2 / (d^2 + c^2) over the whole volume. Coarse-to-fine over
// params.registration.levels (x2 in-plane downsampling per level) with a
// Nelder-Mead simplex at each level. The returned objective never exceeds
// the identity objective.
RegistrationResult register_inplane(const Volume3D& moving, const Volume3D& fixed, const PreprocParams& params);

// Resamples `moving` through the inverse of `transform` (bilinear, clamped
// edges) so that it lies in the fixed frame.
Volume3D apply_inplane_affine(const Volume3D& moving, const Affine2D& transform);

// Mean squared difference between fixed and moving mapped through transform.
double inplane_msd(const Volume3D& moving, const Volume3D& fixed, const Affine2D& transform);

// Nearest-rank percentile: value of rank ceil(pct/100 * n) (clamped to
// [1, n]) in ascending order. pct in [0, 100].
float nearest_rank_percentile(std::span<const float> values, double pct);

// clamp(v, P_lo, P_hi) with nearest-rank percentiles over all voxels.
Volume3D cap_intensities(const Volume3D& vol, double lo_pct, double hi_pct);

// (v - mean) / population std. Throws DegenerateInput("degenerate volume")
// when the volume is constant.
Volume3D zscore_normalize(const Volume3D& vol);

}  // namespace bpeq
