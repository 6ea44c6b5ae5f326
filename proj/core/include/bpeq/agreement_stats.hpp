#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bpeq/volume.hpp"

namespace bpeq {

// Two measurements of the same cases, paired by index.
struct PairedSample {
  std::vector<double> x;
  std::vector<double> y;

  // Equal lengths >= min_n, all finite.
  void validate(std::size_t min_n = 2) const;
};

// 2|A n B| / (|A| + |B|). Throws DegenerateInput("undefined Dice") when both
// masks are empty.
double dice(const Mask3D& a, const Mask3D& b);

double pearson(std::span<const double> x, std::span<const double> y);

// Lin's concordance correlation with population (1/n) moments:
//   2 cov(x,y) / (var x + var y + (mean x - mean y)^2)
double ccc(const PairedSample& s);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool reliable = true;  // false when n < 8
};

// Percentile bootstrap over cases. Resamples with zero variance on both
// sides are redrawn (at most 100 times each). The interval is widened, if
// needed, to contain the point estimate.
ConfidenceInterval ccc_ci(const PairedSample& s, double level = 0.95, int resamples = 2000, std::uint64_t seed = 0);

// Average ranks (1-based), ties share their mean rank.
std::vector<double> midranks(std::span<const double> values);

enum class PValueMethod { kAuto, kExact, kAsymptotic };

struct CorrelationTest {
  double rho = 0.0;
  double p = 1.0;
  bool exact = false;
};

// Spearman's rho (Pearson of midranks). Two-sided p: full permutation
// enumeration for n <= 10, t approximation with n-2 df above that; |rho| = 1
// above n = 10 uses the closed-form permutation count. Throws
// DegenerateInput("undefined correlation") when either input is constant.
CorrelationTest spearman(std::span<const double> x, std::span<const double> y,
                         PValueMethod method = PValueMethod::kAuto);
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct WilcoxonResult {
  double w = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  int n = 0;  // pairs left after dropping zero differences
  double p = 1.0;
  bool exact = false;
};

// Signed-rank test on x - y with zero differences dropped and midranks for
// tied |d|. Two-sided p is exact (all 2^n sign assignments) for n <= 25,
// otherwise normal with tie and continuity corrections. Throws
// DegenerateInput("no nonzero pairs").
WilcoxonResult wilcoxon_signed_rank(const PairedSample& s, PValueMethod method = PValueMethod::kAuto);

struct BootstrapComparison {
  double delta_rho = 0.0;  // rho(q, m1) - rho(q, m2)
  double p = 1.0;
};

// Paired case-level bootstrap of rho(q, m1) - rho(q, m2). p is
// 2 * min(P(delta* <= 0), P(delta* >= 0)), clamped to 1.
BootstrapComparison bootstrap_compare_spearman(std::span<const double> q, std::span<const double> m1,
                                               std::span<const double> m2, int resamples = 2000,
                                               std::uint64_t seed = 0);

}  // namespace bpeq
