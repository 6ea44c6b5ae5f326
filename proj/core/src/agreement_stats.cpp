#include "bpeq/agreement_stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <string>

#include "bpeq/rng.hpp"

namespace bpeq {

namespace {

constexpr int kMaxRedraws = 100;

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct Moments {
  double mx, my, vx, vy, cov;
};

// Population moments.
Moments moments(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  Moments m{mean_of(x), mean_of(y), 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mx;
    const double dy = y[i] - m.my;
    m.vx += dx * dx;
    m.vy += dy * dy;
    m.cov += dx * dy;
  }
  m.vx /= n;
  m.vy /= n;
  m.cov /= n;
  return m;
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
}

double ccc_of(std::span<const double> x, std::span<const double> y) {
  const Moments m = moments(x, y);
  const double d = m.mx - m.my;
  return 2.0 * m.cov / (m.vx + m.vy + d * d);
}

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw InvalidArgument("paired inputs differ in length");
  }
}

// Twice the midrank, as an integer.
std::vector<std::int64_t> doubled_midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::int64_t> r2(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    // ranks i+1 .. j+1 share (i+1 + j+1)/2
    const auto twice = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) r2[idx[k]] = twice;
    i = j + 1;
  }
  return r2;
}

// Tie-group sizes of a sorted copy.
std::vector<std::int64_t> tie_groups(std::span<const double> values) {
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  std::vector<std::int64_t> groups;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
    groups.push_back(static_cast<std::int64_t>(j - i + 1));
    i = j + 1;
  }
  return groups;
}

}  // namespace

void PairedSample::validate(std::size_t min_n) const {
  require_same_length(x.size(), y.size());
  if (x.size() < min_n) {
    throw InvalidArgument("paired sample needs at least " + std::to_string(min_n) + " cases");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw InvalidArgument("paired sample contains non-finite values");
    }
  }
}

double dice(const Mask3D& a, const Mask3D& b) {
  require_same_lattice(a.geometry(), b.geometry(), "Dice inputs");
  const auto va = a.voxels();
  const auto vb = b.voxels();
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    na += va[i];
    nb += vb[i];
    both += va[i] & vb[i];
  }
  if (na + nb == 0) {
    throw DegenerateInput("undefined Dice: both masks are empty");
  }
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size());
  const Moments m = moments(x, y);
  if (m.vx == 0.0 || m.vy == 0.0) {
    throw DegenerateInput("undefined correlation: constant input");
  }
  return m.cov / std::sqrt(m.vx * m.vy);
}

double ccc(const PairedSample& s) {
  s.validate(2);
  const Moments m = moments(s.x, s.y);
  if (m.vx == 0.0 && m.vy == 0.0) {
    throw DegenerateInput("CCC undefined: both inputs have zero variance");
  }
  const double d = m.mx - m.my;
  return 2.0 * m.cov / (m.vx + m.vy + d * d);
}

ConfidenceInterval ccc_ci(const PairedSample& s, double level, int resamples, std::uint64_t seed) {
  s.validate(2);
  if (!(level > 0.0 && level < 1.0) || resamples < 1) {
    throw InvalidArgument("ccc_ci needs level in (0, 1) and resamples >= 1");
  }
  const double estimate = ccc(s);
  const std::size_t n = s.x.size();
  std::vector<double> bx(n), by(n);
  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    std::mt19937_64 gen = substream(seed, static_cast<std::uint64_t>(b));
    int draws = 0;
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = uniform_index(gen, n);
        bx[i] = s.x[k];
        by[i] = s.y[k];
      }
      if (!(is_constant(bx) && is_constant(by))) break;
      if (++draws > kMaxRedraws) {
        throw DegenerateInput("bootstrap resamples keep collapsing to zero variance");
      }
    }
    estimates.push_back(ccc_of(bx, by));
  }
  std::sort(estimates.begin(), estimates.end());
  const double alpha = 1.0 - level;
  const auto pick = [&](double q) {
    auto rank = static_cast<std::int64_t>(std::ceil(q * static_cast<double>(estimates.size()) - 1e-9));
    rank = std::clamp<std::int64_t>(rank, 1, static_cast<std::int64_t>(estimates.size()));
    return estimates[static_cast<std::size_t>(rank - 1)];
  };
  ConfidenceInterval ci;
  ci.lo = std::min(pick(alpha / 2.0), estimate);
  ci.hi = std::max(pick(1.0 - alpha / 2.0), estimate);
  ci.reliable = n >= 8;
  return ci;
}

std::vector<double> midranks(std::span<const double> values) {
  const std::vector<std::int64_t> r2 = doubled_midranks(values);
  std::vector<double> r(r2.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(r2[i]) / 2.0;
  return r;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size());
  if (is_constant(x) || is_constant(y)) {
    throw DegenerateInput("undefined correlation: constant input");
  }
  const std::vector<double> rx = midranks(x);
  const std::vector<double> ry = midranks(y);
  return pearson(rx, ry);
}

CorrelationTest spearman(std::span<const double> x, std::span<const double> y, PValueMethod method) {
  require_same_length(x.size(), y.size());
  const std::size_t n = x.size();
  if (n < 3) {
    throw InvalidArgument("spearman needs at least 3 pairs");
  }
  CorrelationTest res;
  res.rho = std::clamp(spearman_rho(x, y), -1.0, 1.0);

  const bool exact = method == PValueMethod::kExact || (method == PValueMethod::kAuto && n <= 10);
  // Centred doubled ranks; permuting y leaves both sums of squares fixed, so
  // comparing the integer cross-product is comparing |rho| exactly.
  const auto n1 = static_cast<std::int64_t>(n + 1);
  std::vector<std::int64_t> a = doubled_midranks(x);
  std::vector<std::int64_t> b = doubled_midranks(y);
  for (auto& v : a) v -= n1;
  for (auto& v : b) v -= n1;
  std::int64_t observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += a[i] * b[i];
  const std::int64_t target = std::abs(observed);

  if (exact) {
    if (n > 12) {
      throw InvalidArgument("exact Spearman enumeration is limited to n <= 12");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::uint64_t hits = 0, total = 0;
    do {
      std::int64_t s = 0;
      for (std::size_t i = 0; i < n; ++i) s += a[i] * b[perm[i]];
      hits += std::abs(s) >= target ? 1 : 0;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    res.p = static_cast<double>(hits) / static_cast<double>(total);
    res.exact = true;
    return res;
  }

  std::int64_t saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  if (observed * observed == saa * sbb) {
    // |rho| = 1: permutations reproducing the ranks (within tie groups), plus
    // the mirrored ordering when the tie structure is symmetric.
    std::vector<std::int64_t> sorted_b = b;
    std::sort(sorted_b.begin(), sorted_b.end());
    std::vector<std::int64_t> mirrored(sorted_b.rbegin(), sorted_b.rend());
    for (auto& v : mirrored) v = -v;
    double log_count = 0.0;
    for (std::int64_t g : tie_groups(y)) log_count += std::lgamma(static_cast<double>(g) + 1.0);
    const double ways = mirrored == sorted_b ? 2.0 : 1.0;
    res.p = std::min(1.0, ways * std::exp(log_count - std::lgamma(static_cast<double>(n) + 1.0)));
    res.exact = true;
    return res;
  }
  const double df = static_cast<double>(n) - 2.0;
  const double t = res.rho * std::sqrt(df / (1.0 - res.rho * res.rho));
  const boost::math::students_t dist(df);
  res.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  res.exact = false;
  return res;
}

WilcoxonResult wilcoxon_signed_rank(const PairedSample& s, PValueMethod method) {
  s.validate(1);
  std::vector<double> d;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double diff = s.x[i] - s.y[i];
    if (diff != 0.0) d.push_back(diff);
  }
  if (d.empty()) {
    throw DegenerateInput("no nonzero pairs");
  }
  const std::size_t n = d.size();
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(d[i]);
  const std::vector<std::int64_t> r2 = doubled_midranks(mag);

  std::int64_t wp2 = 0, wm2 = 0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? wp2 : wm2) += r2[i];
  WilcoxonResult res;
  res.n = static_cast<int>(n);
  res.w_plus = static_cast<double>(wp2) / 2.0;
  res.w_minus = static_cast<double>(wm2) / 2.0;
  res.w = std::min(res.w_plus, res.w_minus);
  const std::int64_t w2 = std::min(wp2, wm2);

  const bool exact = method == PValueMethod::kExact || (method == PValueMethod::kAuto && n <= 25);
  if (exact) {
    if (n > 60) {
      throw InvalidArgument("exact Wilcoxon distribution is limited to n <= 60");
    }
    // Number of sign assignments per value of 2*W+, built one rank at a time.
    const std::int64_t total2 = wp2 + wm2;
    std::vector<double> ways(static_cast<std::size_t>(total2 + 1), 0.0);
    ways[0] = 1.0;
    std::int64_t reach = 0;
    for (std::int64_t r : r2) {
      for (std::int64_t v = reach; v >= 0; --v) {
        if (ways[static_cast<std::size_t>(v)] != 0.0) ways[static_cast<std::size_t>(v + r)] += ways[static_cast<std::size_t>(v)];
      }
      reach += r;
    }
    double tail = 0.0;
    for (std::int64_t v = 0; v <= w2; ++v) tail += ways[static_cast<std::size_t>(v)];
    res.p = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
    res.exact = true;
    return res;
  }

  const double nn = static_cast<double>(n);
  double tie_term = 0.0;
  for (std::int64_t t : tie_groups(mag)) {
    const double tt = static_cast<double>(t);
    tie_term += tt * tt * tt - tt;
  }
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) {
    res.p = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
  const boost::math::normal_distribution<double> normal;
  res.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(normal, z)));
  res.exact = false;
  return res;
}

BootstrapComparison bootstrap_compare_spearman(std::span<const double> q, std::span<const double> m1,
                                               std::span<const double> m2, int resamples, std::uint64_t seed) {
  require_same_length(q.size(), m1.size());
  require_same_length(q.size(), m2.size());
  if (q.size() < 3 || resamples < 1) {
    throw InvalidArgument("bootstrap comparison needs n >= 3 and resamples >= 1");
  }
  BootstrapComparison res;
  res.delta_rho = spearman_rho(q, m1) - spearman_rho(q, m2);

  const std::size_t n = q.size();
  std::vector<double> bq(n), b1(n), b2(n);
  std::int64_t le = 0, ge = 0;
  for (int b = 0; b < resamples; ++b) {
    std::mt19937_64 gen = substream(seed, static_cast<std::uint64_t>(b));
    int draws = 0;
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = uniform_index(gen, n);
        bq[i] = q[k];
        b1[i] = m1[k];
        b2[i] = m2[k];
      }
      if (!is_constant(bq) && !is_constant(b1) && !is_constant(b2)) break;
      if (++draws > kMaxRedraws) {
        throw DegenerateInput("bootstrap resamples keep collapsing to a constant input");
      }
    }
    const double delta = spearman_rho(bq, b1) - spearman_rho(bq, b2);
    le += delta <= 0.0 ? 1 : 0;
    ge += delta >= 0.0 ? 1 : 0;
  }
  const double total = static_cast<double>(resamples);
  res.p = std::min(1.0, 2.0 * std::min(static_cast<double>(le) / total, static_cast<double>(ge) / total));
  return res;
}

}  // namespace bpeq
