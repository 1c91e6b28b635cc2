#include <benchmark/benchmark.h>

#include <vector>

#include "adjustkit/design.hpp"
#include "adjustkit/estimators.hpp"
#include "adjustkit/glm.hpp"
#include "adjustkit/inference.hpp"
#include "adjustkit/missingdata.hpp"

using namespace adjustkit;

namespace {

const std::vector<Term> kX{Term::main("x")};
const EstimandSpec kMarginalOR{Summary::LogOddsRatio, Level::Marginal, Population::CompleteCase};

TrialDataset trial(int n, bool continuous = false) {
  LogisticScenario s;
  s.n = n;
  s.binary_covariate = !continuous;
  return simulate_trial(s, 42);
}

}  // namespace

static void BM_FitLogistic(benchmark::State& state) {
  const TrialDataset d = trial(static_cast<int>(state.range(0)), true);
  ModelSpec spec;
  spec.terms = {Term::intercept(), Term::treatment(), Term::main("x")};
  for (auto _ : state) benchmark::DoNotOptimize(fit(spec, d).coefficients);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitLogistic)->RangeMultiplier(10)->Range(100, 100000)->Unit(benchmark::kMicrosecond);

static void BM_Standardize(benchmark::State& state) {
  const TrialDataset d = trial(static_cast<int>(state.range(0)), true);
  for (auto _ : state) benchmark::DoNotOptimize(standardize(d, kX, kMarginalOR).estimate);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Standardize)->RangeMultiplier(10)->Range(100, 100000)->Unit(benchmark::kMicrosecond);

static void BM_Iptw(benchmark::State& state) {
  const TrialDataset d = trial(static_cast<int>(state.range(0)), true);
  for (auto _ : state) benchmark::DoNotOptimize(iptw(d, kX, kMarginalOR).estimate);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Iptw)->RangeMultiplier(10)->Range(100, 100000)->Unit(benchmark::kMicrosecond);

static void BM_Bootstrap(benchmark::State& state) {
  const TrialDataset d = trial(2000);
  BootstrapPlan plan;
  plan.replicates = static_cast<int>(state.range(0));
  plan.resampling = Resampling::WithinStratum;
  plan.strata = {"x"};
  const ScalarEstimator est = [](const TrialDataset& b) { return standardize(b, kX, kMarginalOR).estimate; };
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap(d, est, plan).se);
  state.counters["replicates/s"] =
      benchmark::Counter(static_cast<double>(state.iterations() * state.range(0)), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Bootstrap)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_MultipleImputation(benchmark::State& state) {
  LogisticScenario s;
  s.n = 2000;
  s.missing_rate = 0.25;
  const TrialDataset d = simulate_trial(s, 7);
  ImputationPlan plan;
  plan.m = static_cast<int>(state.range(0));
  plan.terms = kX;
  for (auto _ : state) {
    const auto imputed = mi_by_arm(d, plan);
    benchmark::DoNotOptimize(standardize_imputed(imputed, kX, kMarginalOR).estimate);
  }
}
BENCHMARK(BM_MultipleImputation)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
