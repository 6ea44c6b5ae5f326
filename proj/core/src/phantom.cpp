#include "bpeq/phantom.hpp"

#include <cmath>
#include <numbers>

#include "bpeq/preprocess.hpp"
#include "bpeq/rng.hpp"

namespace bpeq {

namespace {

// Box-Muller on the raw 64-bit stream, reproducible across standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : gen_(substream(seed, 0)) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

Phantom make_breast_phantom(const PhantomSpec& spec) {
  Geometry g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  g.validate();
  const auto nx = static_cast<double>(g.dims[0]);
  const auto ny = static_cast<double>(g.dims[1]);
  const auto nz = static_cast<double>(g.dims[2]);

  const double centres_x[2] = {0.28 * nx, 0.72 * nx};
  const double cy = 0.62 * ny;
  const double cz = 0.5 * nz;
  const double ax = 0.2 * nx, ay = 0.26 * ny, az = 0.35 * nz;

  // Slab bounds (inclusive low, exclusive high), even z extent so the
  // enhancing half is exactly half.
  const auto slab_y0 = static_cast<std::int64_t>(std::lround(0.55 * ny));
  const auto slab_y1 = static_cast<std::int64_t>(std::lround(0.72 * ny));
  auto slab_z0 = static_cast<std::int64_t>(std::lround(0.3 * nz));
  auto slab_z1 = static_cast<std::int64_t>(std::lround(0.7 * nz));
  if ((slab_z1 - slab_z0) % 2 != 0) ++slab_z1;
  const std::int64_t slab_zmid =
      slab_z0 + static_cast<std::int64_t>(std::lround(spec.enhancing_fraction * static_cast<double>(slab_z1 - slab_z0)));
  const double slab_half_x = spec.fgt_half_width * nx;

  const auto n = static_cast<std::size_t>(g.count());
  std::vector<float> s0(n, 0.0F), s1(n, 0.0F);
  std::vector<std::uint8_t> breast(n, 0), fgt(n, 0), enh(n, 0);
  const float fgt_value = spec.fat_intensity * spec.fgt_to_fat_ratio;
  const auto factor = static_cast<float>(1.0 + spec.enhancement_pct / 100.0);

  std::size_t i = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z) {
    for (std::int64_t y = 0; y < g.dims[1]; ++y) {
      for (std::int64_t x = 0; x < g.dims[0]; ++x, ++i) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y), fz = static_cast<double>(z);
        for (double cx : centres_x) {
          const double u = (fx - cx) / ax, v = (fy - cy) / ay, w = (fz - cz) / az;
          if (u * u + v * v + w * w <= 1.0) {
            breast[i] = 1;
            s0[i] = s1[i] = spec.fat_intensity;
            if (std::abs(fx - cx) <= slab_half_x && y >= slab_y0 && y < slab_y1 && z >= slab_z0 && z < slab_z1) {
              fgt[i] = 1;
              s0[i] = fgt_value;
              s1[i] = fgt_value;
              if (z < slab_zmid) {
                enh[i] = 1;
                s1[i] = fgt_value * factor;
              }
            }
          }
        }
        if (spec.chest && breast[i] == 0 && fx >= 0.3 * nx && fx < 0.7 * nx && fy >= 0.05 * ny && fy < 0.25 * ny) {
          s0[i] = s1[i] = spec.chest_intensity;
        }
      }
    }
  }

  if (spec.noise_sigma > 0.0) {
    Gaussian noise(spec.seed);
    for (std::size_t k = 0; k < n; ++k) s0[k] += static_cast<float>(spec.noise_sigma * noise());
    for (std::size_t k = 0; k < n; ++k) s1[k] += static_cast<float>(spec.noise_sigma * noise());
  }

  Volume3D post(g, std::move(s1));
  if (spec.motion_tx != 0.0 || spec.motion_ty != 0.0) {
    // Content of S1 displaced by the motion: S1'(p) = S1(p - d).
    Affine2D shift;
    shift.tx = spec.motion_tx;
    shift.ty = spec.motion_ty;
    post = apply_inplane_affine(post, shift);
  }
  return Phantom{Volume3D(g, std::move(s0)), std::move(post), Mask3D(g, std::move(breast)), Mask3D(g, std::move(fgt)),
                 Mask3D(g, std::move(enh))};
}

}  // namespace bpeq
