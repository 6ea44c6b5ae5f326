#include <benchmark/benchmark.h>

#include "bpeq/phantom.hpp"
#include "bpeq/preprocess.hpp"

namespace {

void BM_ResampleIsotropic(benchmark::State& state) {
  bpeq::PhantomSpec spec;
  spec.dims = {128, 128, 40};
  spec.spacing = {0.7, 0.7, 3.0};
  const auto ph = bpeq::make_breast_phantom(spec);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpeq::resample_isotropic(ph.s0, 1.0));
  }
}
BENCHMARK(BM_ResampleIsotropic)->Unit(benchmark::kMillisecond);

void BM_RegisterInplane(benchmark::State& state) {
  const auto n = state.range(0);
  bpeq::PhantomSpec spec;
  spec.dims = {n, n, n / 2};
  spec.motion_tx = 2.5;
  spec.motion_ty = -1.5;
  const auto ph = bpeq::make_breast_phantom(spec);
  const bpeq::PreprocParams params;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpeq::register_inplane(ph.s1, ph.s0, params));
  }
}
BENCHMARK(BM_RegisterInplane)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace
