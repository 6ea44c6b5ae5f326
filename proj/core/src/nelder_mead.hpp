#pragma once

// Derivative-free simplex minimiser (Nelder & Mead, standard coefficients).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace bpeq::detail {

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

struct SimplexOptions {
  int max_iters = 200;
  double ftol = 1e-6;  // relative spread of function values
  double xtol = 1e-4;  // max distance of any vertex from the best one
};

template <typename Fn>
SimplexResult nelder_mead(Fn&& fn, const std::vector<double>& x0, const std::vector<double>& steps,
                          const SimplexOptions& opt) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  SimplexResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    return fn(x);
  };
  for (std::size_t i = 0; i < n; ++i) {
    pts[i + 1][i] += steps[i];
  }
  for (std::size_t i = 0; i <= n; ++i) {
    vals[i] = eval(pts[i]);
  }

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  for (;;) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[n - 1];

    double xspread = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        xspread = std::max(xspread, std::abs(pts[i][k] - pts[best][k]));
      }
    }
    const double fspread = vals[worst] - vals[best];
    if (fspread <= opt.ftol * std::abs(vals[best]) || xspread <= opt.xtol) {
      res.converged = true;
      break;
    }
    if (res.iterations >= opt.max_iters) {
      break;
    }
    ++res.iterations;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k];
    }
    for (double& c : centroid) c /= static_cast<double>(n);

    for (std::size_t k = 0; k < n; ++k) trial[k] = centroid[k] + (centroid[k] - pts[worst][k]);
    const double f_reflect = eval(trial);

    if (f_reflect < vals[best]) {
      for (std::size_t k = 0; k < n; ++k) trial2[k] = centroid[k] + 2.0 * (centroid[k] - pts[worst][k]);
      const double f_expand = eval(trial2);
      if (f_expand < f_reflect) {
        pts[worst] = trial2;
        vals[worst] = f_expand;
      } else {
        pts[worst] = trial;
        vals[worst] = f_reflect;
      }
      continue;
    }
    if (f_reflect < vals[second_worst]) {
      pts[worst] = trial;
      vals[worst] = f_reflect;
      continue;
    }
    // Contraction: outside if the reflection improved on the worst point.
    const bool outside = f_reflect < vals[worst];
    for (std::size_t k = 0; k < n; ++k) {
      trial2[k] = outside ? centroid[k] + 0.5 * (trial[k] - centroid[k])
                          : centroid[k] + 0.5 * (pts[worst][k] - centroid[k]);
    }
    const double f_contract = eval(trial2);
    if (f_contract < (outside ? f_reflect : vals[worst])) {
      pts[worst] = trial2;
      vals[worst] = f_contract;
      continue;
    }
    // Shrink towards the best vertex.
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best_it = std::min_element(vals.begin(), vals.end());
  res.value = *best_it;
  res.x = pts[static_cast<std::size_t>(best_it - vals.begin())];
  return res;
}

}  // namespace bpeq::detail
