#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "joulemark/analysis.hpp"
#include "joulemark/energy.hpp"
#include "joulemark/protocol.hpp"

using namespace joulemark;

namespace {

PowerTrace dense_trace(int ticks) {
  const PowerDomain cpu{DomainKind::CpuPackage, 0};
  const PowerDomain gpu{DomainKind::Gpu, 0};
  const SensorTopology topo{"bench", {{cpu, 0.0, SensorKind::Synthetic}, {gpu, 0.0, SensorKind::Synthetic}}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> w(20.0, 300.0);
  std::vector<PowerSample> samples;
  samples.reserve(static_cast<std::size_t>(ticks) * 2);
  for (int k = 0; k < ticks; ++k) {
    const std::int64_t t = std::int64_t{k} * 100'000'000;
    samples.push_back({t, cpu, w(rng)});
    samples.push_back({t, gpu, w(rng)});
  }
  return PowerTrace::seal(topo, 100, std::move(samples));
}

void BM_Integrate(benchmark::State& state) {
  const auto trace = dense_trace(static_cast<int>(state.range(0)));
  const Phase window = trace.extent();
  for (auto _ : state) benchmark::DoNotOptimize(integrate(trace, window));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 2);
}
BENCHMARK(BM_Integrate)->Range(1 << 10, 1 << 18);

void BM_LassoFit(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), p = 20;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Dataset d;
  for (int j = 0; j < p; ++j) d.columns.push_back("x" + std::to_string(j));
  d.columns.push_back("y");
  d.target = "y";
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    double y = 0.0;
    for (int j = 0; j < p; ++j) {
      row.push_back(g(rng));
      if (j < 4) y += (j + 1) * row.back();
    }
    row.push_back(y + 0.1 * g(rng));
    d.rows.push_back(std::move(row));
  }
  const double lambda = 0.05 * lasso_null_lambda(d);
  for (auto _ : state) benchmark::DoNotOptimize(lasso_fit(d, {lambda}));
}
BENCHMARK(BM_LassoFit)->Arg(100)->Arg(1000)->Arg(10000);

void BM_ComputeMacs(benchmark::State& state) {
  std::vector<LayerSpec> layers;
  for (int i = 0; i < state.range(0); ++i) {
    layers.push_back(i % 2 ? LayerSpec::dense(512, 512, true) : LayerSpec::conv2d(3, 3, 64, 64, 56, 56));
  }
  for (auto _ : state) benchmark::DoNotOptimize(compute_macs(layers));
}
BENCHMARK(BM_ComputeMacs)->Arg(16)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
