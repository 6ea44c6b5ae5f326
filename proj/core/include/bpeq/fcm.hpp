#pragma once

#include <cstdint>
#include <vector>

#include "bpeq/volume.hpp"

namespace bpeq {

// Axial ellipse removed from every slice of the breast mask to cut away the
// chest cavity. Centre and semi-axes are in voxel units. A zero semi-axis
// makes the exclusion empty.
struct EllipseExclusion {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 0.0;
  double ry = 0.0;

  bool empty() const { return rx <= 0.0 || ry <= 0.0; }
  bool contains(double x, double y) const;
  void validate() const;

  // Centred at (nx/2, 0.15*ny) with semi-axes (0.45*nx, 0.2*ny).
  static EllipseExclusion default_for(const Index3& dims);
};

struct IntensityThreshold {
  enum class Mode { kFixed, kOtsu };
  Mode mode = Mode::kOtsu;
  double value = 0.0;

  static IntensityThreshold fixed(double v) { return {Mode::kFixed, v}; }
  static IntensityThreshold otsu() { return {Mode::kOtsu, 0.0}; }
};

// Otsu's threshold over a 256-bin histogram spanning [min, max].
double otsu_threshold(std::span<const float> values);

// Keeps the `keep` largest 26-connected components (ties broken by scan
// order of first voxel).
Mask3D keep_largest_components(const Mask3D& mask, int keep);

// (voxel >= threshold) minus the ellipse on every slice, then the two
// largest 26-connected components. Throws DegenerateInput("empty mask")
// when nothing survives.
Mask3D threshold_breast_mask(const Volume3D& pre, const IntensityThreshold& threshold,
                             const EllipseExclusion& exclusion);

struct FcmParams {
  int clusters = 2;
  double m = 2.0;
  int max_iters = 200;
  double tol = 1e-5;
  double prob_threshold = 0.5;
  // Reserved; initialisation is deterministic (5th/95th percentiles).
  std::uint64_t seed = 0;

  void validate() const;
};

struct FcmResult {
  // Bright-cluster membership inside the breast mask, 0 elsewhere.
  Volume3D membership;
  double c_fat = 0.0;
  double c_fgt = 0.0;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
  // J_m after every iteration; non-increasing.
  std::vector<double> objective_history;
};

// Two-cluster fuzzy c-means on the masked intensities. Throws
// DegenerateInput for an empty mask or a single masked intensity value.
FcmResult fcm_cluster(const Volume3D& pre, const Mask3D& breast, const FcmParams& params);

// membership > prob_threshold (strict, compared in float precision).
Mask3D apply_probability_threshold(const FcmResult& result, double prob_threshold);

}  // namespace bpeq
