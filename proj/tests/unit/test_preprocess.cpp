#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bpeq/preprocess.hpp"
#include "test_support.hpp"

namespace bpeq {
namespace {

using testing::geometry;

TEST(Percentile, MatchesSortedRankOracle) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + gen() % 50;
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(static_cast<int>(gen() % 20));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double pct : {0.0, 1.0, 2.5, 25.0, 50.0, 90.0, 99.9, 100.0}) {
      // Smallest value with at least pct% of the sample at or below it.
      float want = sorted.back();
      for (std::size_t k = 0; k < n; ++k) {
        if (100.0 * static_cast<double>(k + 1) >= pct * static_cast<double>(n) - 1e-9) {
          want = sorted[k];
          break;
        }
      }
      ASSERT_EQ(nearest_rank_percentile(v, pct), want) << "n=" << n << " pct=" << pct;
    }
  }
}

TEST(Cap, PermutationOfThousand) {
  std::vector<float> v(1000);
  std::iota(v.begin(), v.end(), 1.0F);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(9));
  const auto capped = cap_intensities(Volume3D(geometry({10, 10, 10}), v), 0.1, 99.9);
  const auto [lo, hi] = std::minmax_element(capped.voxels().begin(), capped.voxels().end());
  EXPECT_EQ(*lo, 1.0F);
  EXPECT_EQ(*hi, 999.0F);
  EXPECT_EQ(std::count(capped.voxels().begin(), capped.voxels().end(), 999.0F), 2);
}

TEST(ZScore, TwoVoxels) {
  const auto z = zscore_normalize(Volume3D(geometry({2, 1, 1}), std::vector<float>{1.0F, 3.0F}));
  EXPECT_FLOAT_EQ(z[0], -1.0F);
  EXPECT_FLOAT_EQ(z[1], 1.0F);
}

TEST(ZScore, ConstantVolumeIsDegenerate) {
  EXPECT_THROW(zscore_normalize(Volume3D(geometry({3, 3, 3}), 4.0F)), DegenerateInput);
}

TEST(ZScore, MomentsOfResult) {
  const auto z = zscore_normalize(testing::random_volume(geometry({10, 10, 10}), 3, 10.0F, 50.0F));
  long double s = 0;
  long double s2 = 0;
  for (float x : z.voxels()) {
    s += x;
    s2 += static_cast<long double>(x) * x;
  }
  EXPECT_NEAR(static_cast<double>(s / 1000), 0.0, 1e-5);
  EXPECT_NEAR(static_cast<double>(s2 / 1000), 1.0, 1e-5);
}

TEST(Resample, DimsFollowFieldOfView) {
  const auto r = resample_isotropic(Volume3D(geometry({4, 4, 4}, {2.0, 2.0, 2.0}), 1.0F), 1.0);
  EXPECT_EQ(r.dims(), (Index3{8, 8, 8}));
  const auto r2 = resample_isotropic(Volume3D(geometry({5, 5, 3}, {0.7, 0.7, 3.0}), 1.0F), 1.0);
  EXPECT_EQ(r2.dims(), (Index3{4, 4, 9}));  // round(3.5)=4, round(9)=9
  EXPECT_THROW(resample_isotropic(r, 0.0), InvalidArgument);
}

TEST(Resample, RampIsExactInInterior) {
  const auto g = geometry({10, 10, 10});
  const auto ramp = testing::volume_from(g, [](auto x, auto y, auto z) { return x + 2.0 * y + 3.0 * z; });
  const auto r = resample_isotropic(ramp, 0.5);
  ASSERT_EQ(r.dims(), (Index3{20, 20, 20}));
  const auto& og = r.geometry();
  // Physical centre of an output voxel expressed in input voxel units.
  auto in_coord = [&](int axis, std::int64_t i) { return (og.origin[axis] + 0.5 * static_cast<double>(i)) - g.origin[axis]; };
  for (std::int64_t z = 1; z < 19; ++z)
    for (std::int64_t y = 1; y < 19; ++y)
      for (std::int64_t x = 1; x < 19; ++x) {
        const double want = in_coord(0, x) + 2.0 * in_coord(1, y) + 3.0 * in_coord(2, z);
        ASSERT_NEAR(r.at(x, y, z), want, 1e-6) << x << "," << y << "," << z;
      }
}

TEST(Resample, ConstantStaysConstant) {
  const auto r = resample_isotropic(Volume3D(geometry({6, 7, 3}, {0.8, 0.8, 2.7}), 42.0F), 1.0);
  for (float v : r.voxels()) ASSERT_FLOAT_EQ(v, 42.0F);
}

TEST(Affine, InverseRoundTrip) {
  const Affine2D t{1.1, 0.2, -0.1, 0.9, 3.0, -2.0};
  const auto inv = t.inverse();
  const auto p = t.apply(4.0, -7.0);
  const auto q = inv.apply(p[0], p[1]);
  EXPECT_NEAR(q[0], 4.0, 1e-12);
  EXPECT_NEAR(q[1], -7.0, 1e-12);
  EXPECT_THROW((Affine2D{1.0, 0.0, 0.0, -1.0, 0.0, 0.0}.validate()), InvalidArgument);
}

Volume3D blob(const Geometry& g, double cx, double cy, double sigma) {
  return testing::volume_from(g, [&](auto x, auto y, auto) {
    const double dx = static_cast<double>(x) - cx;
    const double dy = static_cast<double>(y) - cy;
    return 10.0 + 100.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  });
}

TEST(Registration, IdentityForIdenticalImages) {
  const auto g = geometry({48, 48, 3});
  const auto f = blob(g, 24.0, 20.0, 5.0);
  const auto r = register_inplane(f, f, PreprocParams{});
  EXPECT_FALSE(r.warning);
  EXPECT_LT(r.transform.max_abs_diff(Affine2D{}), 0.05);
  EXPECT_LE(r.objective_final, r.objective_identity);
}

// Two blobs of different size: a single symmetric blob leaves rotation about
// its centre unconstrained.
Volume3D two_blobs(const Geometry& g, double dx, double dy) {
  const auto a = blob(g, 24.0 + dx, 26.0 + dy, 6.0);
  const auto b = blob(g, 42.0 + dx, 38.0 + dy, 3.5);
  std::vector<float> v(a.voxels().begin(), a.voxels().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.voxels()[i] - 10.0F;
  return Volume3D(g, std::move(v));
}

void expect_maps(const Affine2D& t, double mx, double my, double fx, double fy) {
  const auto p = t.apply(mx, my);
  EXPECT_NEAR(p[0], fx, 0.5) << "from (" << mx << ", " << my << ")";
  EXPECT_NEAR(p[1], fy, 0.5) << "from (" << mx << ", " << my << ")";
}

TEST(Registration, RecoversShift) {
  const auto g = geometry({64, 64, 4});
  const auto fixed = two_blobs(g, 0.0, 0.0);
  const auto moving = two_blobs(g, 3.0, -2.0);
  const auto r = register_inplane(moving, fixed, PreprocParams{});
  EXPECT_FALSE(r.warning);
  // Moving content maps back onto the fixed positions.
  expect_maps(r.transform, 27.0, 24.0, 24.0, 26.0);
  expect_maps(r.transform, 45.0, 36.0, 42.0, 38.0);
  EXPECT_LT(r.objective_final, r.objective_identity);
  EXPECT_LT(inplane_msd(moving, fixed, r.transform), inplane_msd(moving, fixed, Affine2D{}));
  double err = 0.0;
  for (std::int64_t i = 0; i < fixed.size(); ++i) err = std::max(err, std::abs(double(r.registered[i]) - fixed[i]));
  EXPECT_LT(err, 10.0);
}

TEST(Registration, PlainMsdAlsoRecoversShift) {
  const auto g = geometry({64, 64, 2});
  PreprocParams p;
  p.registration.robust_scale = 0.0;
  const auto r = register_inplane(two_blobs(g, 2.0, 1.0), two_blobs(g, 0.0, 0.0), p);
  expect_maps(r.transform, 26.0, 27.0, 24.0, 26.0);
  expect_maps(r.transform, 44.0, 39.0, 42.0, 38.0);
}

TEST(Registration, NoiseGivesIdentityWithWarning) {
  const auto g = geometry({48, 48, 3});
  const auto r = register_inplane(testing::random_volume(g, 1), testing::random_volume(g, 2), PreprocParams{});
  EXPECT_TRUE(r.warning);
  EXPECT_EQ(r.transform.max_abs_diff(Affine2D{}), 0.0);
  EXPECT_EQ(r.objective_final, r.objective_identity);
}

TEST(Registration, RejectsLatticeMismatch) {
  EXPECT_THROW(register_inplane(Volume3D(geometry({8, 8, 2}), 1.0F), Volume3D(geometry({8, 9, 2}), 1.0F),
                                PreprocParams{}),
               GeometryError);
}

TEST(Registration, ApplyTranslationMovesContent) {
  const auto g = geometry({32, 32, 1});
  const auto moving = blob(g, 16.0, 16.0, 3.0);
  const auto out = apply_inplane_affine(moving, Affine2D{1, 0, 0, 1, 2.0, 0.0});
  // Content at x in moving appears at x + 2 in the fixed frame.
  EXPECT_NEAR(out.at(18, 16, 0), moving.at(16, 16, 0), 1e-4);
}

TEST(PreprocParams, Validation) {
  PreprocParams p;
  EXPECT_NO_THROW(p.validate());
  p.cap_low_pct = 60.0;
  p.cap_high_pct = 40.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = {};
  p.registration.robust_scale = -1.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

}  // namespace
}  // namespace bpeq
