// Serial reference kernels against their OpenMP counterparts. Both produce
// bit-identical results, so the only difference measured is scheduling.

#include <benchmark/benchmark.h>

#include "opq/manifold.hpp"
#include "opq/trajectory.hpp"

namespace {

using namespace opq;

const SystemSpec kIsland = SystemSpec::two_observable(1.0, 2.0);
constexpr double kThetaI = kPi - 0.5;

void ensemble(benchmark::State& state, Execution exec) {
  SimConfig c;
  c.system = kIsland;
  c.theta_i = kThetaI;
  c.t_final = 1.0;
  c.n_trajectories = static_cast<std::size_t>(state.range(0));
  c.execution = exec;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_ensemble(c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void manifold(benchmark::State& state, Execution exec) {
  RefinementOptions o;
  o.execution = exec;
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  const double t = static_cast<double>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evolve_manifold(kIsland, kThetaI, lo, hi, t, o));
}

}  // namespace

BENCHMARK_CAPTURE(ensemble, serial, opq::Execution::Serial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(ensemble, parallel, opq::Execution::Parallel)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(manifold, serial, opq::Execution::Serial)->Arg(9)->Arg(18)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(manifold, parallel, opq::Execution::Parallel)->Arg(9)->Arg(18)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
