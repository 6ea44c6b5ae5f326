#include "bpeq/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nelder_mead.hpp"

namespace bpeq {

void Affine2D::validate() const {
  if (!(determinant() > 0.0)) {
    throw InvalidArgument("affine transform must preserve orientation (det > 0)");
  }
}

Affine2D Affine2D::inverse() const {
  const double det = determinant();
  Affine2D inv;
  inv.a11 = a22 / det;
  inv.a12 = -a12 / det;
  inv.a21 = -a21 / det;
  inv.a22 = a11 / det;
  inv.tx = -(inv.a11 * tx + inv.a12 * ty);
  inv.ty = -(inv.a21 * tx + inv.a22 * ty);
  return inv;
}

double Affine2D::max_abs_diff(const Affine2D& o) const {
  return std::max({std::abs(a11 - o.a11), std::abs(a12 - o.a12), std::abs(a21 - o.a21), std::abs(a22 - o.a22),
                   std::abs(tx - o.tx), std::abs(ty - o.ty)});
}

void PreprocParams::validate() const {
  if (!(target_spacing > 0.0)) {
    throw InvalidArgument("target_spacing must be > 0");
  }
  if (!(cap_low_pct >= 0.0 && cap_low_pct < cap_high_pct && cap_high_pct <= 100.0)) {
    throw InvalidArgument("require 0 <= cap_low_pct < cap_high_pct <= 100");
  }
  if (registration.levels < 1 || registration.max_iters_per_level < 1 || !(registration.convergence_tol > 0.0)) {
    throw InvalidArgument("registration needs levels >= 1, max_iters_per_level >= 1, convergence_tol > 0");
  }
  if (!(registration.robust_scale >= 0.0) || !(registration.min_structure_correlation <= 1.0)) {
    throw InvalidArgument("registration needs robust_scale >= 0 and min_structure_correlation <= 1");
  }
}

// ---- resampling ------------------------------------------------------------

namespace {

struct AxisSample {
  std::int64_t i0;
  std::int64_t i1;
  double w1;
};

// Output index j -> clamped input index and linear weight.
std::vector<AxisSample> axis_samples(std::int64_t n_in, double s_in, std::int64_t n_out, double t) {
  std::vector<AxisSample> out(static_cast<std::size_t>(n_out));
  const double ratio = t / s_in;
  for (std::int64_t j = 0; j < n_out; ++j) {
    double u = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(u));
    const std::int64_t i1 = std::min(i0 + 1, n_in - 1);
    out[static_cast<std::size_t>(j)] = {i0, i1, u - static_cast<double>(i0)};
  }
  return out;
}

}  // namespace

Volume3D resample_isotropic(const Volume3D& vol, double target_spacing) {
  if (!(target_spacing > 0.0)) {
    throw InvalidArgument("target_spacing must be > 0");
  }
  const Geometry& in = vol.geometry();
  Geometry out;
  out.orientation = in.orientation;
  std::array<std::vector<AxisSample>, 3> samples;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(in.dims[a]) * in.spacing[a] / target_spacing));
    out.spacing[a] = target_spacing;
    out.origin[a] = in.origin[a] - 0.5 * in.spacing[a] + 0.5 * target_spacing;
    samples[a] = axis_samples(in.dims[a], in.spacing[a], out.dims[a], target_spacing);
  }

  const auto src = vol.voxels();
  const std::int64_t nx = in.dims[0];
  const std::int64_t nxy = in.dims[0] * in.dims[1];
  std::vector<float> dst(static_cast<std::size_t>(out.count()));
  std::size_t o = 0;
  for (const AxisSample& sz : samples[2]) {
    for (const AxisSample& sy : samples[1]) {
      const std::int64_t r00 = sz.i0 * nxy + sy.i0 * nx;
      const std::int64_t r01 = sz.i0 * nxy + sy.i1 * nx;
      const std::int64_t r10 = sz.i1 * nxy + sy.i0 * nx;
      const std::int64_t r11 = sz.i1 * nxy + sy.i1 * nx;
      for (const AxisSample& sx : samples[0]) {
        auto lerp_x = [&](std::int64_t row) {
          return (1.0 - sx.w1) * src[row + sx.i0] + sx.w1 * src[row + sx.i1];
        };
        const double c0 = (1.0 - sy.w1) * lerp_x(r00) + sy.w1 * lerp_x(r01);
        const double c1 = (1.0 - sy.w1) * lerp_x(r10) + sy.w1 * lerp_x(r11);
        dst[o++] = static_cast<float>((1.0 - sz.w1) * c0 + sz.w1 * c1);
      }
    }
  }
  return Volume3D(std::move(out), std::move(dst));
}

// ---- in-plane registration -------------------------------------------------

namespace {

// One pyramid level: slices stacked along z, in-plane physical coordinates
// of voxel (i, j) are (x0 + i*sx, y0 + j*sy) relative to the slice centre.
struct LevelImage {
  std::int64_t nx = 0, ny = 0, nz = 0;
  double sx = 1.0, sy = 1.0;
  double x0 = 0.0, y0 = 0.0;
  std::vector<float> data;
};

LevelImage base_level(const Volume3D& vol) {
  const Geometry& g = vol.geometry();
  LevelImage l;
  l.nx = g.dims[0];
  l.ny = g.dims[1];
  l.nz = g.dims[2];
  l.sx = g.spacing[0];
  l.sy = g.spacing[1];
  l.x0 = -0.5 * static_cast<double>(l.nx - 1) * l.sx;
  l.y0 = -0.5 * static_cast<double>(l.ny - 1) * l.sy;
  l.data.assign(vol.voxels().begin(), vol.voxels().end());
  return l;
}

// 2x2 in-plane block average.
LevelImage downsample(const LevelImage& in) {
  LevelImage out;
  out.nx = (in.nx + 1) / 2;
  out.ny = (in.ny + 1) / 2;
  out.nz = in.nz;
  out.sx = in.nx > 1 ? 2.0 * in.sx : in.sx;
  out.sy = in.ny > 1 ? 2.0 * in.sy : in.sy;
  out.x0 = in.nx > 1 ? in.x0 + 0.5 * in.sx : in.x0;
  out.y0 = in.ny > 1 ? in.y0 + 0.5 * in.sy : in.y0;
  out.data.assign(static_cast<std::size_t>(out.nx * out.ny * out.nz), 0.0F);
  for (std::int64_t z = 0; z < in.nz; ++z) {
    for (std::int64_t j = 0; j < out.ny; ++j) {
      for (std::int64_t i = 0; i < out.nx; ++i) {
        double sum = 0.0;
        int cnt = 0;
        for (std::int64_t dj = 0; dj < 2; ++dj) {
          for (std::int64_t di = 0; di < 2; ++di) {
            const std::int64_t si = 2 * i + di;
            const std::int64_t sj = 2 * j + dj;
            if (si < in.nx && sj < in.ny) {
              sum += in.data[static_cast<std::size_t>(si + in.nx * (sj + in.ny * z))];
              ++cnt;
            }
          }
        }
        out.data[static_cast<std::size_t>(i + out.nx * (j + out.ny * z))] = static_cast<float>(sum / cnt);
      }
    }
  }
  return out;
}

// Visits every fixed-grid pixel with the bilinearly sampled moving value at
// T^-1(p). `visit(index, moving_value)`.
template <typename Visit>
void sample_through(const LevelImage& moving, const LevelImage& fixed, const Affine2D& t, Visit&& visit) {
  const Affine2D b = t.inverse();
  const double du = b.a11 * fixed.sx / moving.sx;
  const double dv = b.a21 * fixed.sx / moving.sy;
  const double umax = static_cast<double>(moving.nx - 1);
  const double vmax = static_cast<double>(moving.ny - 1);
  const std::int64_t slice = moving.nx * moving.ny;
  std::size_t idx = 0;
  for (std::int64_t z = 0; z < fixed.nz; ++z) {
    const float* m = moving.data.data() + z * slice;
    for (std::int64_t j = 0; j < fixed.ny; ++j) {
      const double py = fixed.y0 + static_cast<double>(j) * fixed.sy;
      const double qx = b.a11 * fixed.x0 + b.a12 * py + b.tx;
      const double qy = b.a21 * fixed.x0 + b.a22 * py + b.ty;
      double u = (qx - moving.x0) / moving.sx;
      double v = (qy - moving.y0) / moving.sy;
      for (std::int64_t i = 0; i < fixed.nx; ++i, u += du, v += dv, ++idx) {
        const double uc = std::clamp(u, 0.0, umax);
        const double vc = std::clamp(v, 0.0, vmax);
        const auto iu = static_cast<std::int64_t>(uc);
        const auto iv = static_cast<std::int64_t>(vc);
        const std::int64_t iu1 = std::min(iu + 1, moving.nx - 1);
        const std::int64_t iv1 = std::min(iv + 1, moving.ny - 1);
        const double fu = uc - static_cast<double>(iu);
        const double fv = vc - static_cast<double>(iv);
        const float* r0 = m + iv * moving.nx;
        const float* r1 = m + iv1 * moving.nx;
        const double top = r0[iu] + fu * (r0[iu1] - r0[iu]);
        const double bot = r1[iu] + fu * (r1[iu1] - r1[iu]);
        visit(idx, top + fv * (bot - top));
      }
    }
  }
}

double level_msd(const LevelImage& moving, const LevelImage& fixed, const Affine2D& t) {
  double sum = 0.0;
  sample_through(moving, fixed, t, [&](std::size_t i, double mv) {
    const double d = mv - fixed.data[i];
    sum += d * d;
  });
  return sum / static_cast<double>(fixed.data.size());
}

// Mean of c^2 d^2 / (d^2 + c^2): squared difference for |d| << c, saturating
// at c^2, so strongly enhancing voxels cannot pull the fit. c <= 0 is MSD.
double level_loss(const LevelImage& moving, const LevelImage& fixed, const Affine2D& t, double c) {
  if (!(c > 0.0)) {
    return level_msd(moving, fixed, t);
  }
  const double c2 = c * c;
  double sum = 0.0;
  sample_through(moving, fixed, t, [&](std::size_t i, double mv) {
    const double d = mv - fixed.data[i];
    const double d2 = d * d;
    sum += c2 * d2 / (d2 + c2);
  });
  return sum / static_cast<double>(fixed.data.size());
}

// Parameter vector <-> affine. Linear terms are scaled by the half extent so
// a unit step moves the image border by about 1 mm.
Affine2D from_params(const std::vector<double>& p, double scale) {
  Affine2D a;
  a.a11 = 1.0 + p[0] / scale;
  a.a12 = p[1] / scale;
  a.a21 = p[2] / scale;
  a.a22 = 1.0 + p[3] / scale;
  a.tx = p[4];
  a.ty = p[5];
  return a;
}

std::vector<double> to_params(const Affine2D& a, double scale) {
  return {(a.a11 - 1.0) * scale, a.a12 * scale, a.a21 * scale, (a.a22 - 1.0) * scale, a.tx, a.ty};
}

double pearson(std::span<const float> a, std::span<const float> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double inplane_msd(const Volume3D& moving, const Volume3D& fixed, const Affine2D& transform) {
  require_same_lattice(moving.geometry(), fixed.geometry(), "registration inputs");
  return level_msd(base_level(moving), base_level(fixed), transform);
}

Volume3D apply_inplane_affine(const Volume3D& moving, const Affine2D& transform) {
  transform.validate();
  const LevelImage m = base_level(moving);
  std::vector<float> out(m.data.size());
  sample_through(m, m, transform, [&](std::size_t i, double v) { out[i] = static_cast<float>(v); });
  return Volume3D(moving.geometry(), std::move(out));
}

RegistrationResult register_inplane(const Volume3D& moving, const Volume3D& fixed, const PreprocParams& params) {
  params.validate();
  if (!moving.geometry().same_frame(fixed.geometry())) {
    throw GeometryError("geometry mismatch: registration inputs must share dims, spacing and origin");
  }
  const RegistrationParams& rp = params.registration;

  std::vector<LevelImage> mov{base_level(moving)};
  std::vector<LevelImage> fix{base_level(fixed)};
  for (int l = 1; l < rp.levels; ++l) {
    if (mov.back().nx < 8 || mov.back().ny < 8) {
      break;
    }
    mov.push_back(downsample(mov.back()));
    fix.push_back(downsample(fix.back()));
  }

  const double scale = 0.5 * std::max(static_cast<double>(mov[0].nx) * mov[0].sx, static_cast<double>(mov[0].ny) * mov[0].sy);
  double c = 0.0;
  if (rp.robust_scale > 0.0) {
    c = rp.robust_scale * (static_cast<double>(nearest_rank_percentile(fixed.voxels(), 99.0)) -
                           static_cast<double>(nearest_rank_percentile(fixed.voxels(), 1.0)));
  }
  RegistrationResult res{.transform = Affine2D{}, .registered = moving};
  res.objective_identity = level_loss(mov[0], fix[0], Affine2D{}, c);

  Affine2D current;
  for (auto l = static_cast<std::ptrdiff_t>(mov.size()) - 1; l >= 0; --l) {
    const LevelImage& m = mov[static_cast<std::size_t>(l)];
    const LevelImage& f = fix[static_cast<std::size_t>(l)];
    const double h = std::max(m.sx, m.sy);
    auto objective = [&](const std::vector<double>& p) {
      const Affine2D a = from_params(p, scale);
      const double det = a.determinant();
      if (!(det > 0.25 && det < 4.0)) {
        return std::numeric_limits<double>::max();
      }
      return level_loss(m, f, a, c);
    };
    detail::SimplexOptions opt;
    opt.max_iters = rp.max_iters_per_level;
    opt.ftol = rp.convergence_tol;
    opt.xtol = 1e-3 * h;
    const std::vector<double> steps(6, 2.0 * h);
    const detail::SimplexResult sr = detail::nelder_mead(objective, to_params(current, scale), steps, opt);
    res.evaluations += sr.evaluations;
    current = from_params(sr.x, scale);
  }

  const double final_msd = level_loss(mov[0], fix[0], current, c);
  if (res.objective_identity == 0.0) {
    // Already identical; identity is optimal.
    res.objective_final = 0.0;
    return res;
  }
  if (final_msd < res.objective_identity) {
    Volume3D registered = apply_inplane_affine(moving, current);
    if (pearson(registered.voxels(), fixed.voxels()) >= rp.min_structure_correlation) {
      res.transform = current;
      res.registered = std::move(registered);
      res.objective_final = final_msd;
      return res;
    }
  }
  res.warning = true;
  res.objective_final = res.objective_identity;
  return res;
}

// ---- intensity normalisation ----------------------------------------------

float nearest_rank_percentile(std::span<const float> values, double pct) {
  if (values.empty()) {
    throw InvalidArgument("percentile of an empty set");
  }
  if (!(pct >= 0.0 && pct <= 100.0)) {
    throw InvalidArgument("percentile must lie in [0, 100]");
  }
  const auto n = static_cast<std::int64_t>(values.size());
  // The small offset absorbs floating error in pct*n/100 for exact ranks.
  auto rank = static_cast<std::int64_t>(std::ceil(pct * static_cast<double>(n) / 100.0 - 1e-6));
  rank = std::clamp<std::int64_t>(rank, 1, n);
  std::vector<float> copy(values.begin(), values.end());
  auto nth = copy.begin() + (rank - 1);
  std::nth_element(copy.begin(), nth, copy.end());
  return *nth;
}

Volume3D cap_intensities(const Volume3D& vol, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    throw InvalidArgument("require 0 <= lo_pct < hi_pct <= 100");
  }
  const float lo = nearest_rank_percentile(vol.voxels(), lo_pct);
  const float hi = nearest_rank_percentile(vol.voxels(), hi_pct);
  std::vector<float> out(vol.voxels().begin(), vol.voxels().end());
  for (float& v : out) {
    v = std::clamp(v, lo, hi);
  }
  return Volume3D(vol.geometry(), std::move(out));
}

Volume3D zscore_normalize(const Volume3D& vol) {
  const auto v = vol.voxels();
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  if (*mn == *mx) {
    throw DegenerateInput("degenerate volume");
  }
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (float x : v) {
    const double d = x - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) {
    throw DegenerateInput("degenerate volume");
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>((v[i] - mean) / sd);
  }
  return Volume3D(vol.geometry(), std::move(out));
}

}  // namespace bpeq
