#include <benchmark/benchmark.h>

#include "proxigmm/simulation.hpp"

namespace {

proxigmm::StudyConfig small_study(bool serial, int threads) {
  proxigmm::StudyConfig cfg;
  cfg.scenario.scenario = proxigmm::Scenario::II;
  cfg.scenario.n = 400;
  cfg.arms = proxigmm::arms_for(proxigmm::study_methods());
  cfg.reps = 8;
  cfg.base_seed = 11;
  cfg.serial = serial;
  cfg.threads = threads;
  return cfg;
}

void BM_StudySerial(benchmark::State& state) {
  const auto cfg = small_study(true, 1);
  for (auto _ : state) benchmark::DoNotOptimize(proxigmm::run_study(cfg).summaries);
  state.SetItemsProcessed(state.iterations() * cfg.reps);
}

void BM_StudyParallel(benchmark::State& state) {
  const auto cfg = small_study(false, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(proxigmm::run_study(cfg).summaries);
  state.SetItemsProcessed(state.iterations() * cfg.reps);
}

void BM_SelectK(benchmark::State& state) {
  proxigmm::ScenarioConfig sc;
  sc.scenario = proxigmm::Scenario::II;
  sc.n = static_cast<std::size_t>(state.range(0));
  const auto ds = proxigmm::generate(sc, 3);
  const auto bridge = proxigmm::linear_outcome_bridge(ds);
  const auto spec = proxigmm::fit_sieve(proxigmm::default_power_spec(ds), ds);
  for (auto _ : state) benchmark::DoNotOptimize(proxigmm::select_k(ds, bridge, spec, 12).k_star);
}

}  // namespace

BENCHMARK(BM_StudySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StudyParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SelectK)->Arg(400)->Arg(800)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
