#include <benchmark/benchmark.h>

#include "trajclust/dataset.hpp"
#include "trajclust/dpgp.hpp"
#include "trajclust/lcmm.hpp"

using namespace trajclust;

namespace {

DpgpHyperParams default_hyper() {
  DpgpHyperParams h;
  h.cov.latent = {4.0, 3.0};
  h.cov.individual = {0.2, 2.0};
  h.cov.nugget = 0.1;
  return h;
}

TrajectoryDataset cohort(int n) {
  SimulationConfig cfg;
  cfg.n_subjects = n;
  cfg.seed = 1;
  return simulate_cohort(cfg).data;
}

void BM_AssembleAndLogml(benchmark::State& state) {
  const auto data = cohort(static_cast<int>(state.range(0)));
  std::vector<int> all(data.subjects.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const auto sc = StackedCluster::from_dataset(data, all);
  const auto cfg = default_hyper().cov;
  for (auto _ : state)
    benchmark::DoNotOptimize(log_marginal_likelihood(sc, cfg));
}
BENCHMARK(BM_AssembleAndLogml)->Arg(10)->Arg(30)->Arg(95);

void BM_GibbsSweep(benchmark::State& state) {
  const auto data = cohort(static_cast<int>(state.range(0)));
  GibbsSampler sampler(data, default_hyper());
  CrpState crp = CrpState::single_cluster(data.n_subjects());
  Rng rng(7);
  for (auto _ : state) sampler.sweep(crp, rng);
}
BENCHMARK(BM_GibbsSweep)->Arg(30)->Arg(95)->Unit(benchmark::kMillisecond);

void BM_LcmmFit(benchmark::State& state) {
  const auto data = cohort(95);
  const LcmmSpec spec{static_cast<int>(state.range(0)), CovKind::NC};
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(em_fit(data, spec, {1, 1e-6, 200}, rng));
  }
}
BENCHMARK(BM_LcmmFit)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
