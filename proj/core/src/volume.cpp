#include "bpeq/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bpeq {

void Geometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) {
      throw InvalidArgument("dims must be >= 1 on every axis");
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw InvalidArgument("spacing must be finite and > 0 on every axis");
    }
    if (!std::isfinite(origin[a])) {
      throw InvalidArgument("origin must be finite");
    }
  }
}

bool Geometry::same_lattice(const Geometry& other) const {
  if (dims != other.dims) {
    return false;
  }
  for (int a = 0; a < 3; ++a) {
    const double scale = std::max(std::abs(spacing[a]), std::abs(other.spacing[a]));
    if (std::abs(spacing[a] - other.spacing[a]) > 1e-6 * scale) {
      return false;
    }
  }
  return true;
}

bool Geometry::same_frame(const Geometry& other) const {
  if (!same_lattice(other)) {
    return false;
  }
  for (int a = 0; a < 3; ++a) {
    if (std::abs(origin[a] - other.origin[a]) > 1e-4) {
      return false;
    }
  }
  return true;
}

template <typename T>
Grid<T>::Grid(Geometry geometry, std::vector<T> voxels)
    : geometry_(std::move(geometry)), voxels_(std::move(voxels)) {
  geometry_.validate();
  if (static_cast<std::int64_t>(voxels_.size()) != geometry_.count()) {
    throw InvalidArgument("voxel count " + std::to_string(voxels_.size()) + " does not match dims (" +
                          std::to_string(geometry_.count()) + ")");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::all_of(voxels_.begin(), voxels_.end(), [](T v) { return std::isfinite(v); })) {
      throw InvalidArgument("volume contains non-finite voxels");
    }
  } else {
    if (!std::all_of(voxels_.begin(), voxels_.end(), [](T v) { return v == 0 || v == 1; })) {
      throw InvalidArgument("mask voxels must be 0 or 1");
    }
  }
}

template <typename T>
Grid<T>::Grid(Geometry geometry, T fill) : Grid(geometry, std::vector<T>(static_cast<std::size_t>(std::max<std::int64_t>(geometry.count(), 0)), fill)) {}

template class Grid<float>;
template class Grid<std::uint8_t>;

void require_same_lattice(const Geometry& a, const Geometry& b, const char* what) {
  if (!a.same_lattice(b)) {
    throw GeometryError(std::string("geometry mismatch: ") + what);
  }
}

std::int64_t count_ones(const Mask3D& mask) {
  const auto v = mask.voxels();
  return std::count(v.begin(), v.end(), std::uint8_t{1});
}

double volume_of_mask(const Mask3D& mask) {
  return static_cast<double>(count_ones(mask)) * mask.geometry().voxel_volume_mm3();
}

namespace {

template <typename Op>
Mask3D combine(const Mask3D& a, const Mask3D& b, Op op) {
  require_same_lattice(a.geometry(), b.geometry(), "mask combination");
  std::vector<std::uint8_t> out(a.voxels().size());
  const auto va = a.voxels();
  const auto vb = b.voxels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = op(va[i], vb[i]) ? 1 : 0;
  }
  return Mask3D(a.geometry(), std::move(out));
}

}  // namespace

Mask3D mask_and(const Mask3D& a, const Mask3D& b) {
  return combine(a, b, [](auto x, auto y) { return x != 0 && y != 0; });
}

Mask3D mask_or(const Mask3D& a, const Mask3D& b) {
  return combine(a, b, [](auto x, auto y) { return x != 0 || y != 0; });
}

bool mask_subset(const Mask3D& inner, const Mask3D& outer) {
  require_same_lattice(inner.geometry(), outer.geometry(), "mask subset test");
  const auto vi = inner.voxels();
  const auto vo = outer.voxels();
  for (std::size_t i = 0; i < vi.size(); ++i) {
    if (vi[i] != 0 && vo[i] == 0) {
      return false;
    }
  }
  return true;
}

Mask3D binarize_above(const Volume3D& vol, double threshold) {
  const float t = static_cast<float>(threshold);
  const auto v = vol.voxels();
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > t ? 1 : 0;
  }
  return Mask3D(vol.geometry(), std::move(out));
}

}  // namespace bpeq
