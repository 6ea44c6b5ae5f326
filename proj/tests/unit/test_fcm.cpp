#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "bpeq/fcm.hpp"
#include "bpeq/preprocess.hpp"
#include "test_support.hpp"

namespace bpeq {
namespace {

using testing::geometry;

// Textbook c-means update with the full membership matrix,
// u_ik = 1 / sum_j (|x_k - c_i| / |x_k - c_j|)^(2/(m-1)).
struct ReferenceFcm {
  double c[2];
  std::vector<double> u_bright;
};

ReferenceFcm reference_fcm(const std::vector<float>& x, double c0, double c1, double m, int iters) {
  const std::size_t n = x.size();
  std::vector<std::array<double, 2>> u(n);
  double c[2] = {c0, c1};
  auto memberships = [&]() {
    for (std::size_t k = 0; k < n; ++k) {
      for (int i = 0; i < 2; ++i) {
        const double di = std::abs(x[k] - c[i]);
        if (di == 0.0) {
          u[k] = {0.0, 0.0};
          u[k][static_cast<std::size_t>(i)] = 1.0;
          break;
        }
        double s = 0.0;
        for (int j = 0; j < 2; ++j) s += std::pow(di / std::abs(x[k] - c[j]), 2.0 / (m - 1.0));
        u[k][static_cast<std::size_t>(i)] = 1.0 / s;
      }
    }
  };
  memberships();
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < 2; ++i) {
      long double num = 0;
      long double den = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double w = std::pow(u[k][static_cast<std::size_t>(i)], m);
        num += w * x[k];
        den += w;
      }
      c[i] = static_cast<double>(num / den);
    }
    memberships();
  }
  ReferenceFcm out{{c[0], c[1]}, {}};
  for (const auto& uk : u) out.u_bright.push_back(uk[1]);
  return out;
}

Mask3D all_ones(const Geometry& g) { return Mask3D(g, std::uint8_t{1}); }

TEST(Fcm, TwoValuePhantomConverges) {
  const auto g = geometry({20, 20, 10});
  const auto v = testing::volume_from(g, [](auto x, auto, auto) { return x < 8 ? 0.0 : 100.0; });
  const auto r = fcm_cluster(v, all_ones(g), FcmParams{});
  EXPECT_NEAR(r.c_fat, 0.0, 1e-3);
  EXPECT_NEAR(r.c_fgt, 100.0, 1e-3);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.iterations, 50);
  for (std::int64_t i = 0; i < v.size(); ++i) EXPECT_EQ(r.membership[i], v[i] > 50.0F ? 1.0F : 0.0F);
}

TEST(Fcm, ObjectiveNeverIncreases) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = geometry({12, 12, 6});
    std::normal_distribution<float> fat(100.0F, 15.0F);
    std::normal_distribution<float> fgt(250.0F, 30.0F);
    std::vector<float> vals(static_cast<std::size_t>(g.count()));
    for (auto& x : vals) x = (gen() % 3 == 0) ? fgt(gen) : fat(gen);
    FcmParams p;
    p.m = 1.5 + 0.25 * static_cast<double>(trial % 4);
    const auto r = fcm_cluster(Volume3D(g, vals), all_ones(g), p);
    ASSERT_FALSE(r.objective_history.empty());
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      ASSERT_LE(r.objective_history[i], r.objective_history[i - 1] * (1.0 + 1e-12)) << "trial " << trial << " it " << i;
    }
    EXPECT_EQ(r.objective, r.objective_history.back());
  }
}

TEST(Fcm, MatchesReferenceImplementation) {
  const auto g = geometry({10, 10, 10});
  const auto v = testing::random_volume(g, 23, 0.0F, 50.0F);
  const auto mask = testing::random_mask(g, 24, 0.7);
  FcmParams p;
  p.tol = 1e-12;
  p.max_iters = 60;
  const auto r = fcm_cluster(v, mask, p);

  std::vector<float> x;
  for (std::int64_t i = 0; i < v.size(); ++i)
    if (mask[i] != 0) x.push_back(v[i]);
  const auto ref = reference_fcm(x, nearest_rank_percentile(x, 5.0), nearest_rank_percentile(x, 95.0), 2.0,
                                 r.iterations);
  EXPECT_NEAR(r.c_fat, ref.c[0], 1e-6);
  EXPECT_NEAR(r.c_fgt, ref.c[1], 1e-6);
  std::size_t k = 0;
  for (std::int64_t i = 0; i < v.size(); ++i) {
    if (mask[i] != 0) {
      ASSERT_NEAR(r.membership[i], ref.u_bright[k++], 1e-6);
    } else {
      ASSERT_EQ(r.membership[i], 0.0F);
    }
  }
}

TEST(Fcm, MembershipIsAffineInvariant) {
  const auto g = geometry({16, 16, 8});
  const auto v = testing::random_volume(g, 31, 0.0F, 100.0F);
  const auto mask = testing::random_mask(g, 32, 0.8);
  // a = 3, b = -7 keeps every transformed sample exactly representable
  // relative to the original rounding.
  std::vector<float> t(v.voxels().begin(), v.voxels().end());
  for (auto& x : t) x = 3.0F * x - 7.0F;
  const auto r1 = fcm_cluster(v, mask, FcmParams{});
  const auto r2 = fcm_cluster(Volume3D(g, t), mask, FcmParams{});
  EXPECT_NEAR(r2.c_fat, 3.0 * r1.c_fat - 7.0, 1e-3);
  EXPECT_NEAR(r2.c_fgt, 3.0 * r1.c_fgt - 7.0, 1e-3);
  for (std::int64_t i = 0; i < v.size(); ++i) ASSERT_NEAR(r1.membership[i], r2.membership[i], 1e-6);
}

TEST(Fcm, DegenerateInputs) {
  const auto g = geometry({4, 4, 4});
  EXPECT_THROW(fcm_cluster(Volume3D(g, 5.0F), all_ones(g), FcmParams{}), DegenerateInput);
  EXPECT_THROW(fcm_cluster(testing::random_volume(g, 1), Mask3D(g, std::uint8_t{0}), FcmParams{}), DegenerateInput);
  FcmParams bad;
  bad.m = 1.0;
  EXPECT_THROW(fcm_cluster(testing::random_volume(g, 1), all_ones(g), bad), InvalidArgument);
}

TEST(Fcm, ThresholdIsStrict) {
  const auto g = geometry({3, 1, 1});
  FcmResult r{.membership = Volume3D(g, std::vector<float>{0.5F, 0.6F, 0.4F}), .objective_history = {}};
  const auto m = apply_probability_threshold(r, 0.5);
  EXPECT_EQ(m[0], 0);
  EXPECT_EQ(m[1], 1);
  EXPECT_EQ(m[2], 0);
  const auto m6 = apply_probability_threshold(r, 0.6);
  EXPECT_EQ(m6[1], 0);
}

TEST(Otsu, SeparatesBimodalSample) {
  std::vector<float> v;
  for (int i = 0; i < 500; ++i) v.push_back(10.0F + static_cast<float>(i % 7));
  for (int i = 0; i < 300; ++i) v.push_back(200.0F + static_cast<float>(i % 11));
  const double t = otsu_threshold(v);
  EXPECT_GT(t, 16.0);
  EXPECT_LE(t, 200.0);
  EXPECT_EQ(otsu_threshold(std::vector<float>{3.0F, 3.0F}), 3.0);
}

TEST(Ellipse, DefaultAndContains) {
  const auto e = EllipseExclusion::default_for({100, 200, 10});
  EXPECT_DOUBLE_EQ(e.cx, 50.0);
  EXPECT_DOUBLE_EQ(e.cy, 30.0);
  EXPECT_DOUBLE_EQ(e.rx, 45.0);
  EXPECT_DOUBLE_EQ(e.ry, 40.0);
  EXPECT_TRUE(e.contains(50.0, 30.0));
  EXPECT_TRUE(e.contains(95.0, 30.0));
  EXPECT_FALSE(e.contains(96.0, 30.0));
  EXPECT_FALSE((EllipseExclusion{1, 1, 0, 5}).contains(1, 1));
}

// Union-find labelling with 26-connectivity.
std::vector<int> label_components(const Mask3D& m, std::map<int, std::int64_t>& sizes) {
  const auto d = m.dims();
  std::vector<int> parent(static_cast<std::size_t>(m.size()));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  for (std::int64_t z = 0; z < d[2]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[0]; ++x) {
        if (m.at(x, y, z) == 0) continue;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const auto xx = x + dx, yy = y + dy, zz = z + dz;
              if (xx < 0 || yy < 0 || zz < 0 || xx >= d[0] || yy >= d[1] || zz >= d[2]) continue;
              if (m.at(xx, yy, zz) == 0) continue;
              parent[static_cast<std::size_t>(find(static_cast<int>(m.index(x, y, z))))] = find(static_cast<int>(m.index(xx, yy, zz)));
            }
      }
  std::vector<int> root(parent.size(), -1);
  for (std::int64_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0) continue;
    root[static_cast<std::size_t>(i)] = find(static_cast<int>(i));
    ++sizes[root[static_cast<std::size_t>(i)]];
  }
  return root;
}

TEST(Components, KeepLargestMatchesUnionFind) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto g = geometry({9, 8, 7});
    const auto m = testing::random_mask(g, seed, 0.12);
    std::map<int, std::int64_t> sizes;
    const auto root = label_components(m, sizes);
    for (int keep : {1, 2, 3}) {
      const auto kept = keep_largest_components(m, keep);
      ASSERT_TRUE(mask_subset(kept, m));
      // Whole components only.
      std::map<int, std::int64_t> kept_sizes;
      for (std::int64_t i = 0; i < m.size(); ++i)
        if (kept[i] != 0) ++kept_sizes[root[static_cast<std::size_t>(i)]];
      for (const auto& [r, n] : kept_sizes) ASSERT_EQ(n, sizes[r]);
      ASSERT_EQ(kept_sizes.size(), std::min<std::size_t>(static_cast<std::size_t>(keep), sizes.size()));
      // And the largest ones.
      std::vector<std::int64_t> all;
      for (const auto& [r, n] : sizes) all.push_back(n);
      std::sort(all.rbegin(), all.rend());
      std::int64_t want = 0;
      for (std::size_t i = 0; i < kept_sizes.size(); ++i) want += all[i];
      ASSERT_EQ(count_ones(kept), want) << "seed " << seed << " keep " << keep;
    }
  }
}

TEST(BreastMask, ThresholdExcludesEllipseAndKeepsTwoBlobs) {
  const auto g = geometry({40, 40, 4});
  const auto v = testing::volume_from(g, [](auto x, auto y, auto) {
    if (y > 20 && x > 2 && x < 15) return 100.0;   // left blob
    if (y > 20 && x > 24 && x < 38) return 100.0;  // right blob
    if (y < 3 && x < 3) return 100.0;              // small speck
    if (y < 8 && x >= 12 && x <= 28) return 150.0; // chest, inside the ellipse
    return 0.0;
  });
  const EllipseExclusion e{20.0, 3.0, 12.0, 8.0};
  const auto m = threshold_breast_mask(v, IntensityThreshold::fixed(50.0), e);
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t y = 0; y < 40; ++y)
      for (std::int64_t x = 0; x < 40; ++x) {
        const bool want = y > 20 && ((x > 2 && x < 15) || (x > 24 && x < 38));
        ASSERT_EQ(m.at(x, y, z) != 0, want) << x << "," << y << "," << z;
      }
  EXPECT_THROW(threshold_breast_mask(v, IntensityThreshold::fixed(1000.0), e), DegenerateInput);
}

TEST(BreastMask, ThresholdIsInclusive) {
  const auto g = geometry({4, 4, 1});
  const Volume3D v(g, 50.0F);
  EXPECT_EQ(count_ones(threshold_breast_mask(v, IntensityThreshold::fixed(50.0), EllipseExclusion{})), 16);
}

}  // namespace
}  // namespace bpeq
