#include "hiermeta/onestage.hpp"
#include "hiermeta/sim.hpp"
#include "hiermeta/stage1.hpp"
#include "hiermeta/stage2.hpp"

#include <benchmark/benchmark.h>

namespace {

hiermeta::CohortData dataset(int K, int n) {
  auto s = hiermeta::sim::Scenario::exchangeable(K, 0.25, n, 1, 0.5, 7);
  return hiermeta::sim::generate_dataset(s, 0);
}

void BM_Stage1(benchmark::State& state) {
  const auto data = dataset(static_cast<int>(state.range(0)), 500);
  for (auto _ : state) benchmark::DoNotOptimize(hiermeta::stage1::run(data));
}
BENCHMARK(BM_Stage1)->Arg(3)->Arg(5)->Arg(10);

void BM_Stage2(benchmark::State& state) {
  const auto block = hiermeta::stage1::run(dataset(static_cast<int>(state.range(0)), 500)).block;
  for (auto _ : state) benchmark::DoNotOptimize(hiermeta::stage2::pool_within_cohort(block));
}
BENCHMARK(BM_Stage2)->Arg(3)->Arg(5)->Arg(10);

void BM_MarginalLoglik(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  const auto data = dataset(K, 500);
  hiermeta::onestage::Params p{Eigen::VectorXd::Zero(K), Eigen::VectorXd::Ones(K), 3.0, 0.25,
                               Eigen::MatrixXd::Identity(K, K)};
  for (auto _ : state) benchmark::DoNotOptimize(hiermeta::onestage::marginal_loglik(p, data));
}
BENCHMARK(BM_MarginalLoglik)->Arg(3)->Arg(5)->Arg(10);

void BM_FitOnestage(benchmark::State& state) {
  const auto data = dataset(static_cast<int>(state.range(0)), 500);
  hiermeta::onestage::Options opts;
  opts.restarts = 0;
  for (auto _ : state) benchmark::DoNotOptimize(hiermeta::onestage::fit_onestage(data, opts));
}
BENCHMARK(BM_FitOnestage)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_GenerateDataset(benchmark::State& state) {
  auto s = hiermeta::sim::Scenario::exchangeable(10, 0.25, 500, 1, 0.5, 7);
  int rep = 0;
  for (auto _ : state) benchmark::DoNotOptimize(hiermeta::sim::generate_dataset(s, rep++));
}
BENCHMARK(BM_GenerateDataset);

}  // namespace

BENCHMARK_MAIN();
