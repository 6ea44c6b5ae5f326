#include <benchmark/benchmark.h>

#include <random>

#include "bpeq/backends.hpp"
#include "bpeq/patch_infer.hpp"

namespace {

bpeq::Volume3D random_volume(const bpeq::Index3& dims) {
  bpeq::Geometry g;
  g.dims = dims;
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  std::vector<float> v(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]));
  for (auto& x : v) x = u(gen);
  return bpeq::Volume3D(g, std::move(v));
}

void BM_PlanTiling(benchmark::State& state) {
  std::mt19937_64 gen(3);
  for (auto _ : state) {
    const bpeq::Index3 d{1 + static_cast<std::int64_t>(gen() % 400), 1 + static_cast<std::int64_t>(gen() % 400),
                         1 + static_cast<std::int64_t>(gen() % 400)};
    benchmark::DoNotOptimize(bpeq::plan_tiling(d));
  }
}
BENCHMARK(BM_PlanTiling);

// Extract, identity predict and stitch; jobs as the second argument.
void BM_RunTiledIdentity(benchmark::State& state) {
  const auto n = state.range(0);
  const auto vol = random_volume({n, n, n / 2});
  const auto plan = bpeq::plan_tiling(vol.dims(), {96, 96, 96});
  const bpeq::IdentityBackend identity;
  const bpeq::Volume3D* ch[] = {&vol};
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpeq::run_tiled(ch, identity, plan, static_cast<int>(state.range(1))));
  }
  state.SetItemsProcessed(state.iterations() * vol.size());
}
BENCHMARK(BM_RunTiledIdentity)->Args({128, 1})->Args({200, 1})->Args({200, 2})->Unit(benchmark::kMillisecond);

}  // namespace
