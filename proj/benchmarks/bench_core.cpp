#include <random>

#include <benchmark/benchmark.h>

#include "mhng/behavior.hpp"
#include "mhng/experiment.hpp"
#include "mhng/metrics.hpp"
#include "mhng/protocol.hpp"

using namespace mhng;

namespace {

void BM_GibbsSweep(benchmark::State& state) {
  const RunSetup setup = prepare_run(ExperimentConfig{}, "MH", 0);
  AgentState agent = setup.dyad.agent_a;
  Rng rng(1);
  for (auto _ : state) {
    gibbs_sweep_agent(agent, setup.dyad.observations_a, setup.dyad.priors_a, rng);
    benchmark::DoNotOptimize(agent.theta.data());
  }
}
BENCHMARK(BM_GibbsSweep);

// One full 200-interaction game at the default schedule.
void BM_Game(benchmark::State& state) {
  const RunSetup setup = prepare_run(ExperimentConfig{}, "MH", 0);
  for (auto _ : state) {
    Rng rng(setup.seeds.game);
    benchmark::DoNotOptimize(run_game(setup.dyad, rng).events.size());
  }
}
BENCHMARK(BM_Game)->Unit(benchmark::kMillisecond);

void BM_JointGibbsTarget(benchmark::State& state) {
  const ExperimentConfig config;
  const StimulusSet data = run_dataset(config, 0);
  for (auto _ : state) benchmark::DoNotOptimize(run_target(config, data, 1).sign_marginals.data());
}
BENCHMARK(BM_JointGibbsTarget)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  const auto n = state.range(0);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u;
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = u(gen);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian_match(cost).total_cost);
}
BENCHMARK(BM_Hungarian)->Arg(3)->Arg(8)->Arg(32);

void BM_Ari(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(2);
  std::uniform_int_distribution<int> k(0, 4);
  Labels a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = k(gen);
    b[i] = k(gen);
  }
  for (auto _ : state) benchmark::DoNotOptimize(adjusted_rand_index(a, b));
}
BENCHMARK(BM_Ari)->Arg(10)->Arg(1000);

void BM_FitLinearBernoulli(benchmark::State& state) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u;
  std::vector<AcceptanceSample> samples(static_cast<std::size_t>(state.range(0)));
  for (auto& s : samples) {
    s.r = u(gen);
    s.z = u(gen) < 0.6 * s.r + 0.2;
  }
  for (auto _ : state) benchmark::DoNotOptimize(fit_linear_bernoulli(samples).a);
}
BENCHMARK(BM_FitLinearBernoulli)->Arg(1000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
