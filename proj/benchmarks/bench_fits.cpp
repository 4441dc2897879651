#include <benchmark/benchmark.h>

#include "crate/ate.hpp"
#include "crate/coxph.hpp"
#include "crate/logistic.hpp"
#include "crate/simlab.hpp"

using namespace crate;

namespace {

Dataset sample(std::size_t n) { return simulate_dataset(DgmSpec::default_spec(), n, 1); }

void BM_CoxFit(benchmark::State& state) {
  const Dataset d = sample(static_cast<std::size_t>(state.range(0)));
  const Eigen::MatrixXd x = design_matrix(d, full_simulation_formula(), true).values;
  for (auto _ : state) benchmark::DoNotOptimize(fit_cox(d, x, 1));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CoxFit)->RangeMultiplier(2)->Range(256, 4096)->Complexity();

void BM_LogisticFit(benchmark::State& state) {
  const Dataset d = sample(static_cast<std::size_t>(state.range(0)));
  const Eigen::MatrixXd x = design_matrix(d, full_simulation_formula(), false).values;
  std::vector<int> a;
  for (const auto& s : d.samples()) a.push_back(s.treatment);
  for (auto _ : state) benchmark::DoNotOptimize(fit_logistic(x, a));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LogisticFit)->RangeMultiplier(2)->Range(256, 4096)->Complexity();

void BM_EstimateAte(benchmark::State& state) {
  const Dataset d = sample(static_cast<std::size_t>(state.range(0)));
  const FormulaSpec formulas = scenario_formulas(Misspecification::None);
  const auto estimators = all_estimators();
  for (auto _ : state) benchmark::DoNotOptimize(estimate_ate(d, formulas, 10.0, estimators));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EstimateAte)->RangeMultiplier(2)->Range(256, 2048)->Unit(benchmark::kMillisecond)->Complexity();

}  // namespace

BENCHMARK_MAIN();
