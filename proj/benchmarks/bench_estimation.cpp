#include <benchmark/benchmark.h>

#include "normap/estimation.hpp"
#include "normap/rng.hpp"

using namespace normap;

static void BM_FitVoxel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<CovariateRecord> covars;
  for (std::size_t i = 0; i < n; ++i) {
    covars.push_back({"s" + std::to_string(i), 55.0 + 35.0 * static_cast<double>(i) / static_cast<double>(n),
                      static_cast<int>(i % 2), Group::CN});
  }
  const auto design = make_design(covars);
  const auto X = design.matrix(covars);
  const auto y = sn_sample(cp_to_dp({0.0, 1.0, 0.5}), n, 3);
  std::vector<double> yy(y.size());
  for (std::size_t i = 0; i < n; ++i) yy[i] = y[i] + 0.01 * X(static_cast<Eigen::Index>(i), 1);
  for (auto _ : state) benchmark::DoNotOptimize(fit_voxel(yy, X));
}
BENCHMARK(BM_FitVoxel)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);
