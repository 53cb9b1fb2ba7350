#include <benchmark/benchmark.h>

#include <cmath>

#include "normap/interpolation.hpp"

using namespace normap;

static void BM_FieldInterpolation(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Geometry g{{n, n, n}, {1, 1, 1}};
  const BrainMask mask(g, std::vector<std::uint8_t>(g.dims.voxel_count(), 1));
  const auto grid = build_grid(mask, 8.0);
  std::vector<double> vals;
  for (const auto& p : grid.center_positions()) vals.push_back(std::sin(p.x / 20.0) * std::cos(p.y / 25.0));
  const FieldInterpolator interp(grid, mask, 16.0 / 3.0);
  for (auto _ : state) benchmark::DoNotOptimize(interp.on_mask(vals));
}
BENCHMARK(BM_FieldInterpolation)->Arg(32)->Arg(48)->Unit(benchmark::kMillisecond);

static void BM_RbfFit(benchmark::State& state) {
  const Geometry g{{48, 48, 48}, {1, 1, 1}};
  const BrainMask mask(g, std::vector<std::uint8_t>(g.dims.voxel_count(), 1));
  const auto grid = build_grid(mask, 8.0);
  const auto pts = grid.center_positions();
  std::vector<double> vals(pts.size(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(rbf_fit(pts, vals, 16.0 / 3.0));
}
BENCHMARK(BM_RbfFit)->Unit(benchmark::kMillisecond);
