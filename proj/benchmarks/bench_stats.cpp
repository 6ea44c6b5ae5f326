#include <benchmark/benchmark.h>

#include <random>

#include "bpeq/agreement_stats.hpp"

namespace {

bpeq::PairedSample sample(std::size_t n) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> z;
  bpeq::PairedSample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.x.push_back(z(gen));
    s.y.push_back(0.8 * s.x.back() + 0.4 * z(gen));
  }
  return s;
}

void BM_CccBootstrap(benchmark::State& state) {
  const auto s = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bpeq::ccc_ci(s, 0.95, 2000, 1));
}
BENCHMARK(BM_CccBootstrap)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_SpearmanExact(benchmark::State& state) {
  const auto s = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bpeq::spearman(s.x, s.y, bpeq::PValueMethod::kExact));
}
BENCHMARK(BM_SpearmanExact)->Arg(7)->Arg(10);

void BM_WilcoxonExact(benchmark::State& state) {
  auto s = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bpeq::wilcoxon_signed_rank(s, bpeq::PValueMethod::kExact));
}
BENCHMARK(BM_WilcoxonExact)->Arg(10)->Arg(25);

void BM_BootstrapCompare(benchmark::State& state) {
  const auto a = sample(100), b = sample(100);
  for (auto _ : state) benchmark::DoNotOptimize(bpeq::bootstrap_compare_spearman(a.x, a.y, b.y, 2000, 1));
}
BENCHMARK(BM_BootstrapCompare)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
