#include "bpeq/fcm.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "bpeq/preprocess.hpp"

namespace bpeq {

bool EllipseExclusion::contains(double x, double y) const {
  if (empty()) {
    return false;
  }
  const double u = (x - cx) / rx;
  const double v = (y - cy) / ry;
  return u * u + v * v <= 1.0;
}

void EllipseExclusion::validate() const {
  if (rx < 0.0 || ry < 0.0 || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw InvalidArgument("ellipse semi-axes must be >= 0 and centre finite");
  }
}

EllipseExclusion EllipseExclusion::default_for(const Index3& dims) {
  const auto nx = static_cast<double>(dims[0]);
  const auto ny = static_cast<double>(dims[1]);
  return {nx / 2.0, 0.15 * ny, 0.45 * nx, 0.2 * ny};
}

double otsu_threshold(std::span<const float> values) {
  if (values.empty()) {
    throw InvalidArgument("otsu threshold of an empty set");
  }
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn_it;
  const double hi = *mx_it;
  if (lo == hi) {
    return lo;
  }
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  const double width = (hi - lo) / kBins;
  for (float v : values) {
    const int b = std::min(kBins - 1, static_cast<int>((v - lo) / width));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[static_cast<std::size_t>(b)];
    sum0 += b * hist[static_cast<std::size_t>(b)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + (best_bin + 1) * width;
}

Mask3D keep_largest_components(const Mask3D& mask, int keep) {
  const Index3& d = mask.dims();
  const auto src = mask.voxels();
  std::vector<std::int32_t> label(src.size(), 0);
  std::vector<std::int64_t> sizes{0};
  std::vector<std::int64_t> queue;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(src.size()); ++start) {
    if (src[static_cast<std::size_t>(start)] == 0 || label[static_cast<std::size_t>(start)] != 0) continue;
    const auto id = static_cast<std::int32_t>(sizes.size());
    std::int64_t count = 0;
    queue.assign(1, start);
    label[static_cast<std::size_t>(start)] = id;
    while (!queue.empty()) {
      const std::int64_t v = queue.back();
      queue.pop_back();
      ++count;
      const std::int64_t x = v % d[0];
      const std::int64_t y = (v / d[0]) % d[1];
      const std::int64_t z = v / (d[0] * d[1]);
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const std::int64_t zz = z + dz;
        if (zz < 0 || zz >= d[2]) continue;
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          const std::int64_t yy = y + dy;
          if (yy < 0 || yy >= d[1]) continue;
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const std::int64_t xx = x + dx;
            if (xx < 0 || xx >= d[0]) continue;
            const std::int64_t n = xx + d[0] * (yy + d[1] * zz);
            if (src[static_cast<std::size_t>(n)] != 0 && label[static_cast<std::size_t>(n)] == 0) {
              label[static_cast<std::size_t>(n)] = id;
              queue.push_back(n);
            }
          }
        }
      }
    }
    sizes.push_back(count);
  }
  std::vector<std::int32_t> ids(sizes.size() - 1);
  std::iota(ids.begin(), ids.end(), 1);
  std::stable_sort(ids.begin(), ids.end(), [&](std::int32_t a, std::int32_t b) { return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)]; });
  std::vector<std::uint8_t> retained(sizes.size(), 0);
  for (std::size_t i = 0; i < ids.size() && i < static_cast<std::size_t>(std::max(keep, 0)); ++i) {
    retained[static_cast<std::size_t>(ids[i])] = 1;
  }
  std::vector<std::uint8_t> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = retained[static_cast<std::size_t>(label[i])];
  }
  return Mask3D(mask.geometry(), std::move(out));
}

Mask3D threshold_breast_mask(const Volume3D& pre, const IntensityThreshold& threshold,
                             const EllipseExclusion& exclusion) {
  exclusion.validate();
  const double t = threshold.mode == IntensityThreshold::Mode::kOtsu ? otsu_threshold(pre.voxels()) : threshold.value;
  const Index3& d = pre.dims();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(pre.size()), 0);
  std::vector<std::uint8_t> in_ellipse(static_cast<std::size_t>(d[0] * d[1]), 0);
  for (std::int64_t y = 0; y < d[1]; ++y) {
    for (std::int64_t x = 0; x < d[0]; ++x) {
      in_ellipse[static_cast<std::size_t>(x + d[0] * y)] =
          exclusion.contains(static_cast<double>(x), static_cast<double>(y)) ? 1 : 0;
    }
  }
  const auto v = pre.voxels();
  const std::int64_t slice = d[0] * d[1];
  bool any = false;
  for (std::int64_t i = 0; i < pre.size(); ++i) {
    if (v[static_cast<std::size_t>(i)] >= t && in_ellipse[static_cast<std::size_t>(i % slice)] == 0) {
      out[static_cast<std::size_t>(i)] = 1;
      any = true;
    }
  }
  if (!any) {
    throw DegenerateInput("empty mask: intensity threshold " + std::to_string(t) + " selects no voxels");
  }
  return keep_largest_components(Mask3D(pre.geometry(), std::move(out)), 2);
}

void FcmParams::validate() const {
  if (clusters != 2) {
    throw InvalidArgument("fuzzy c-means is fixed at 2 clusters");
  }
  if (!(m > 1.0)) {
    throw InvalidArgument("fuzziness m must be > 1");
  }
  if (max_iters < 1 || !(tol > 0.0)) {
    throw InvalidArgument("fcm needs max_iters >= 1 and tol > 0");
  }
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) {
    throw InvalidArgument("prob_threshold must lie in (0, 1)");
  }
}

namespace {

// Bright-cluster membership of x given centroids (dark, bright).
double bright_membership(double x, double c_dark, double c_bright, double exponent) {
  const double d_dark = (x - c_dark) * (x - c_dark);
  const double d_bright = (x - c_bright) * (x - c_bright);
  if (d_bright == 0.0) {
    return 1.0;
  }
  if (d_dark == 0.0) {
    return 0.0;
  }
  // u_b = 1 / (1 + (d_b/d_d)^(1/(m-1))) on squared distances.
  if (exponent == 1.0) {
    return d_dark / (d_dark + d_bright);
  }
  return 1.0 / (1.0 + std::pow(d_bright / d_dark, exponent));
}

double pow_m(double v, double m) { return m == 2.0 ? v * v : std::pow(v, m); }

double objective(const std::vector<float>& x, const std::vector<double>& u_bright, double c_dark, double c_bright,
                 double m) {
  double j = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ub = u_bright[i];
    const double ud = 1.0 - ub;
    j += pow_m(ud, m) * (x[i] - c_dark) * (x[i] - c_dark) + pow_m(ub, m) * (x[i] - c_bright) * (x[i] - c_bright);
  }
  return j;
}

}  // namespace

FcmResult fcm_cluster(const Volume3D& pre, const Mask3D& breast, const FcmParams& params) {
  params.validate();
  require_same_lattice(pre.geometry(), breast.geometry(), "fcm image vs breast mask");

  std::vector<std::int64_t> where;
  std::vector<float> x;
  const auto pv = pre.voxels();
  const auto mv = breast.voxels();
  for (std::int64_t i = 0; i < pre.size(); ++i) {
    if (mv[static_cast<std::size_t>(i)] != 0) {
      where.push_back(i);
      x.push_back(pv[static_cast<std::size_t>(i)]);
    }
  }
  if (x.empty()) {
    throw DegenerateInput("degenerate input: empty breast mask");
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mn == *mx) {
    throw DegenerateInput("degenerate input: masked intensities are constant");
  }

  double c_dark = nearest_rank_percentile(x, 5.0);
  double c_bright = nearest_rank_percentile(x, 95.0);
  if (c_dark == c_bright) {
    c_dark = *mn;
    c_bright = *mx;
  }

  const double m = params.m;
  const double exponent = 1.0 / (m - 1.0);
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    u[i] = bright_membership(x[i], c_dark, c_bright, exponent);
  }

  FcmResult res{.membership = Volume3D(pre.geometry(), 0.0F), .objective_history = {}};
  for (int it = 0; it < params.max_iters; ++it) {
    double num_d = 0.0, den_d = 0.0, num_b = 0.0, den_b = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double wb = pow_m(u[i], m);
      const double wd = pow_m(1.0 - u[i], m);
      num_b += wb * x[i];
      den_b += wb;
      num_d += wd * x[i];
      den_d += wd;
    }
    if (den_d > 0.0) c_dark = num_d / den_d;
    if (den_b > 0.0) c_bright = num_b / den_b;

    double max_change = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double nu = bright_membership(x[i], c_dark, c_bright, exponent);
      max_change = std::max(max_change, std::abs(nu - u[i]));
      u[i] = nu;
    }
    res.iterations = it + 1;
    res.objective_history.push_back(objective(x, u, c_dark, c_bright, m));
    if (max_change < params.tol) {
      res.converged = true;
      break;
    }
  }

  if (c_dark > c_bright) {
    std::swap(c_dark, c_bright);
    for (double& ui : u) ui = 1.0 - ui;
  }
  res.c_fat = c_dark;
  res.c_fgt = c_bright;
  res.objective = res.objective_history.back();

  std::vector<float> membership(static_cast<std::size_t>(pre.size()), 0.0F);
  for (std::size_t i = 0; i < where.size(); ++i) {
    membership[static_cast<std::size_t>(where[i])] = static_cast<float>(u[i]);
  }
  res.membership = Volume3D(pre.geometry(), std::move(membership));
  return res;
}

Mask3D apply_probability_threshold(const FcmResult& result, double prob_threshold) {
  return binarize_above(result.membership, prob_threshold);
}

}  // namespace bpeq
