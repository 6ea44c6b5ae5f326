#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bpeq/error.hpp"

namespace bpeq {

using Index3 = std::array<std::int64_t, 3>;
using Vec3 = std::array<double, 3>;

inline std::int64_t voxel_count(const Index3& dims) { return dims[0] * dims[1] * dims[2]; }

// NIfTI orientation fields. Carried through read/write untouched; nothing in
// the toolkit interprets them.
struct NiftiOrientation {
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0.0F;
  float quatern_c = 0.0F;
  float quatern_d = 0.0F;
  float qfac = 1.0F;
  std::array<float, 4> srow_x{};
  std::array<float, 4> srow_y{};
  std::array<float, 4> srow_z{};

  friend bool operator==(const NiftiOrientation&, const NiftiOrientation&) = default;
};

// Lattice of a voxel grid. Voxel (i, j, k) has its centre at
// origin + (i*sx, j*sy, k*sz) in mm.
struct Geometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::optional<NiftiOrientation> orientation;

  // Throws InvalidArgument when dims < 1 or spacing <= 0.
  void validate() const;

  // Same dims and spacing (relative tolerance 1e-6 on spacing).
  bool same_lattice(const Geometry& other) const;
  // same_lattice plus matching origin (absolute tolerance 1e-4 mm).
  bool same_frame(const Geometry& other) const;

  std::int64_t count() const { return voxel_count(dims); }
  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
};

// Dense x-fastest scalar grid. Immutable once built; to derive a new grid,
// copy voxels(), edit the copy and construct a new Grid.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid(Geometry geometry, std::vector<T> voxels);
  Grid(Geometry geometry, T fill);

  const Geometry& geometry() const noexcept { return geometry_; }
  const Index3& dims() const noexcept { return geometry_.dims; }
  std::span<const T> voxels() const noexcept { return voxels_; }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(voxels_.size()); }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x + geometry_.dims[0] * (y + geometry_.dims[1] * z);
  }
  T at(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept { return voxels_[index(x, y, z)]; }
  T operator[](std::int64_t i) const noexcept { return voxels_[i]; }

  // Moves the voxel buffer out; the grid is left empty and must not be used.
  std::vector<T> take_voxels() && { return std::move(voxels_); }

 private:
  Geometry geometry_;
  std::vector<T> voxels_;
};

// 32-bit float image: all voxels finite.
using Volume3D = Grid<float>;
// Binary image: every voxel is 0 or 1.
using Mask3D = Grid<std::uint8_t>;

extern template class Grid<float>;
extern template class Grid<std::uint8_t>;

// Throws GeometryError naming `what` unless a and b share dims and spacing.
void require_same_lattice(const Geometry& a, const Geometry& b, const char* what);

std::int64_t count_ones(const Mask3D& mask);

// Physical volume of the 1-voxels in mm^3.
double volume_of_mask(const Mask3D& mask);

// Element-wise helpers; arguments must share a lattice.
Mask3D mask_and(const Mask3D& a, const Mask3D& b);
Mask3D mask_or(const Mask3D& a, const Mask3D& b);
bool mask_subset(const Mask3D& inner, const Mask3D& outer);

// voxel > threshold, compared in float precision so a value stored as
// float(threshold) never passes.
Mask3D binarize_above(const Volume3D& vol, double threshold);

}  // namespace bpeq
