#include <benchmark/benchmark.h>

#include "normap/distribution.hpp"

using namespace normap;

static void BM_SnCdf(benchmark::State& state) {
  const SkewNormalDP dp{0.0, 1.0, static_cast<double>(state.range(0))};
  double x = -4.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sn_cdf(x, dp));
    x = x > 4.0 ? -4.0 : x + 0.01;
  }
}
BENCHMARK(BM_SnCdf)->Arg(0)->Arg(2)->Arg(10);

static void BM_OwenT(benchmark::State& state) {
  double h = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(owen_t(h, 3.0));
    h = h > 5.0 ? 0.0 : h + 0.01;
  }
}
BENCHMARK(BM_OwenT);

static void BM_Quantile(benchmark::State& state) {
  double p = 1e-6;
  for (auto _ : state) {
    benchmark::DoNotOptimize(std_normal_quantile(p));
    p = p > 0.999 ? 1e-6 : p + 1e-3;
  }
}
BENCHMARK(BM_Quantile);
