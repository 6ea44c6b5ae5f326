#include <benchmark/benchmark.h>

#include "bpeq/fcm.hpp"
#include "bpeq/phantom.hpp"

namespace {

bpeq::Phantom phantom(std::int64_t n) {
  bpeq::PhantomSpec spec;
  spec.dims = {n, n, n};
  return bpeq::make_breast_phantom(spec);
}

void BM_BreastMask(benchmark::State& state) {
  const auto ph = phantom(state.range(0));
  const auto ellipse = bpeq::EllipseExclusion::default_for(ph.s0.dims());
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpeq::threshold_breast_mask(ph.s0, bpeq::IntensityThreshold::fixed(50.0), ellipse));
  }
  state.SetItemsProcessed(state.iterations() * ph.s0.size());
}
BENCHMARK(BM_BreastMask)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_FcmCluster(benchmark::State& state) {
  const auto ph = phantom(state.range(0));
  const bpeq::FcmParams params;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpeq::fcm_cluster(ph.s0, ph.breast, params));
  }
  state.SetItemsProcessed(state.iterations() * ph.s0.size());
}
BENCHMARK(BM_FcmCluster)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace
