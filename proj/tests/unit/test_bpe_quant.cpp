#include <gtest/gtest.h>

#include <charconv>

#include <cstring>
#include <random>
#include <sstream>

#include "bpeq/bpe_quant.hpp"
#include "test_support.hpp"

namespace bpeq {
namespace {

using testing::geometry;

DceSeries series(const Geometry& g, std::vector<float> s0, std::vector<float> s1) {
  return DceSeries{{Volume3D(g, std::move(s0)), Volume3D(g, std::move(s1))}};
}

TEST(PeMap, PercentEnhancementAndFloor) {
  const auto g = geometry({4, 1, 1});
  const auto pe = compute_pe_map(series(g, {100, 200, 0, -5}, {180, 100, 10, 10}), BpeParams{});
  EXPECT_FLOAT_EQ(pe.pe[0], 80.0F);
  EXPECT_FLOAT_EQ(pe.pe[1], -50.0F);
  EXPECT_EQ(pe.valid[2], 0);
  EXPECT_EQ(pe.pe[2], 0.0F);
  EXPECT_EQ(pe.valid[3], 0);
}

TEST(PeMap, RejectsMismatchedTimepoints) {
  const DceSeries s{{Volume3D(geometry({2, 2, 2}), 1.0F), Volume3D(geometry({2, 2, 3}), 1.0F)}};
  EXPECT_THROW(compute_pe_map(s, BpeParams{}), GeometryError);
  EXPECT_THROW(compute_pe_map(DceSeries{{Volume3D(geometry({2, 2, 2}), 1.0F)}}, BpeParams{}), InvalidArgument);
}

TEST(BpeMask, ThresholdIsInclusive) {
  const auto g = geometry({3, 1, 1});
  const auto pe = compute_pe_map(series(g, {100, 100, 100}, {150, 149.99F, 150}), BpeParams{});
  ASSERT_EQ(pe.pe[0], 50.0F);
  const Mask3D fgt(g, std::vector<std::uint8_t>{1, 1, 0});
  const auto bpe = compute_bpe_mask(pe, fgt, BpeParams{});
  EXPECT_EQ(bpe[0], 1);  // exactly 50 is in
  EXPECT_EQ(bpe[1], 0);
  EXPECT_EQ(bpe[2], 0);  // outside FGT
}

TEST(BpeMask, SubsetOfFgtProperty) {
  const auto g = geometry({12, 12, 12});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s0 = testing::random_volume(g, seed, 0.0F, 100.0F);
    const auto s1 = testing::random_volume(g, seed + 100, 0.0F, 200.0F);
    const auto fgt = testing::random_mask(g, seed + 200, 0.4);
    const auto pe = compute_pe_map(DceSeries{{s0, s1}}, BpeParams{});
    const auto bpe = compute_bpe_mask(pe, fgt, BpeParams{});
    ASSERT_TRUE(mask_subset(bpe, fgt));
    const auto m = compute_metrics(fgt, fgt, bpe, pe);
    ASSERT_LE(*m.bpe_fgt_ratio_pct, 100.0);
    ASSERT_GE(*m.bpe_fgt_ratio_pct, 0.0);
  }
}

TEST(Metrics, WorkedExample) {
  const auto g = geometry({10, 10, 10});
  const auto breast = Mask3D(g, std::uint8_t{1});
  const auto fgt = testing::mask_where(g, [](auto, auto, auto z) { return z < 2; });
  const auto bpe = testing::mask_where(g, [](auto x, auto y, auto z) { return z == 0 && y < 5; });
  const PeMap pe{Volume3D(g, 80.0F), Mask3D(g, std::uint8_t{1})};
  const auto m = compute_metrics(breast, fgt, bpe, pe);
  EXPECT_DOUBLE_EQ(m.breast_volume_mm3, 1000.0);
  EXPECT_DOUBLE_EQ(m.fgt_volume_mm3, 200.0);
  EXPECT_DOUBLE_EQ(m.bpe_volume_mm3, 50.0);
  EXPECT_DOUBLE_EQ(*m.bpe_fgt_ratio_pct, 25.0);
  EXPECT_DOUBLE_EQ(*m.bpe_breast_ratio_pct, 5.0);
  EXPECT_DOUBLE_EQ(m.bpe_integrated_intensity, 4000.0);
}

TEST(Metrics, IntegratedIntensityUsesMeanPe) {
  const auto g = geometry({2, 1, 1});
  const Mask3D all(g, std::uint8_t{1});
  const PeMap pe{Volume3D(g, std::vector<float>{60.0F, 100.0F}), all};
  EXPECT_DOUBLE_EQ(compute_metrics(all, all, all, pe).bpe_integrated_intensity, 160.0);
}

TEST(Metrics, EmptyMasks) {
  const auto g = geometry({2, 2, 2});
  const Mask3D none(g, std::uint8_t{0});
  const Mask3D all(g, std::uint8_t{1});
  const PeMap pe{Volume3D(g, 0.0F), all};
  const auto m = compute_metrics(all, none, none, pe);
  EXPECT_FALSE(m.bpe_fgt_ratio_pct.has_value());
  EXPECT_DOUBLE_EQ(*m.bpe_breast_ratio_pct, 0.0);
  EXPECT_EQ(m.bpe_integrated_intensity, 0.0);
  const auto m2 = compute_metrics(all, all, none, pe);
  EXPECT_DOUBLE_EQ(*m2.bpe_fgt_ratio_pct, 0.0);
  EXPECT_THROW(compute_metrics(all, none, all, pe), InvalidArgument);
  EXPECT_THROW(compute_metrics(all, all, Mask3D(geometry({2, 2, 3}), std::uint8_t{0}), pe), GeometryError);
}

TEST(Metrics, AnisotropicVoxels) {
  const auto g = geometry({4, 4, 4}, {0.5, 0.5, 2.0});
  const Mask3D all(g, std::uint8_t{1});
  const PeMap pe{Volume3D(g, 70.0F), all};
  const auto m = compute_metrics(all, all, all, pe);
  EXPECT_DOUBLE_EQ(m.bpe_volume_mm3, 32.0);
  EXPECT_DOUBLE_EQ(m.bpe_integrated_intensity, 32.0 * 70.0);
}

TEST(FormatNumber, RoundTripsExactly) {
  std::mt19937_64 gen(99);
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t bits = gen();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    if (!std::isfinite(v)) continue;
    const auto s = format_number(v);
    double back = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), back);
    ASSERT_TRUE(r.ec == std::errc{} && r.ptr == s.data() + s.size()) << s;
    ASSERT_EQ(back, v) << s;
  }
  EXPECT_EQ(format_number(50.0), "50");
  EXPECT_EQ(format_number(0.1), "0.1");
}

TEST(MetricsCsv, RoundTripWithNa) {
  std::vector<MetricsRow> rows;
  BpeMetrics a;
  a.breast_volume_mm3 = 1000;
  a.fgt_volume_mm3 = 0;
  a.bpe_volume_mm3 = 0;
  a.bpe_breast_ratio_pct = 0.0;
  rows.push_back({"c1", "fcm/default", a});
  BpeMetrics b;
  b.breast_volume_mm3 = 12.5;
  b.fgt_volume_mm3 = 1.0 / 3.0;
  b.bpe_volume_mm3 = 0.1;
  b.bpe_fgt_ratio_pct = 30.000000000000004;
  b.bpe_breast_ratio_pct = 0.8;
  b.bpe_integrated_intensity = 8.0;
  rows.push_back({"case,2", "dl/r\"1", b});

  std::ostringstream os;
  write_metrics_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), kMetricsCsvHeader);
  EXPECT_NE(os.str().find(",NA,"), std::string::npos);
  std::istringstream is(os.str());
  const auto back = read_metrics_csv(is);
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back[1].case_id, "case,2");
  EXPECT_EQ(back[1].method, "dl/r\"1");
  EXPECT_FALSE(back[0].metrics.bpe_fgt_ratio_pct.has_value());
  EXPECT_EQ(back[1].metrics.fgt_volume_mm3, 1.0 / 3.0);
  EXPECT_EQ(*back[1].metrics.bpe_fgt_ratio_pct, 30.000000000000004);
}

TEST(MetricsCsv, RejectsBadInput) {
  std::istringstream wrong_header("a,b,c\n");
  EXPECT_THROW(read_metrics_csv(wrong_header), FormatError);
  std::istringstream bad_number(std::string(kMetricsCsvHeader) + "\nc,m,1,2,x,4,5,6\n");
  EXPECT_THROW(read_metrics_csv(bad_number), FormatError);
  std::istringstream short_row(std::string(kMetricsCsvHeader) + "\nc,m,1\n");
  EXPECT_THROW(read_metrics_csv(short_row), FormatError);
}

}  // namespace
}  // namespace bpeq
