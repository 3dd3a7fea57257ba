// Serial reference versus OpenMP path for the parallel kernels.

#include <benchmark/benchmark.h>

#include "hscm/cam.hpp"
#include "hscm/intervene.hpp"
#include "hscm/simgen.hpp"

using namespace hscm;

namespace {

ExecPolicy policy_of(const benchmark::State& state) {
  return state.range(0) == 0 ? ExecPolicy::serial : ExecPolicy::parallel;
}

const GroundTruth& truth() {
  static const GroundTruth t = [] {
    SimConfig c;
    c.n = 100;
    c.m = 100;
    c.seed = 7;
    return simulate(c);
  }();
  return t;
}

const HscmModel& model() {
  static const HscmModel m = estimate(truth().data, {});
  return m;
}

void BM_Estimate(benchmark::State& state) {
  EstimateOptions o;
  o.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(estimate(truth().data, o));
}

void BM_Cam(benchmark::State& state) {
  CamConfig c;
  c.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(cam(truth().data.x, Level::Unit, c));
}

void BM_Intervene(benchmark::State& state) {
  const InterventionRequest req{NodeId{Level::GroupZ, 0}, 1.0, 20, 20, 3};
  for (auto _ : state) {
    benchmark::DoNotOptimize(do_intervention(model(), truth().data, req, policy_of(state)));
  }
}

void BM_Benchmark(benchmark::State& state) {
  SimConfig c;
  c.n = 25;
  c.m = 25;
  BenchmarkOptions o;
  o.replicates = 4;
  o.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(run_benchmark({c}, o));
}

}  // namespace

BENCHMARK(BM_Estimate)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Cam)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Intervene)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Benchmark)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
