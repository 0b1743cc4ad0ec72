#include <benchmark/benchmark.h>

#include "metacog/dataset.hpp"
#include "metacog/inference.hpp"

using namespace metacog;

namespace {

std::vector<DetectionStats> sample_stats(int count, std::uint64_t seed) {
  const CategorySet cats(5);
  return synthesize_run(PriorConfig{}, cats, count, seed, "bench").detection_stats(cats);
}

void BM_Reweight(benchmark::State& state) {
  const auto mode = static_cast<WorldStateMode>(state.range(0));
  const auto stats = sample_stats(75, 1);
  ParticleFilterConfig config;
  config.world_state_mode = mode;
  for (auto _ : state) {
    ParticleEnsemble ens(config, PriorConfig{}, CategorySet(5));
    for (const auto& s : stats) ens.reweight(s);
    benchmark::DoNotOptimize(ens.effective_sample_size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(stats.size()) *
                          config.num_particles);
}
BENCHMARK(BM_Reweight)->Arg(0)->Arg(1)->ArgNames({"sample_mode"});

void BM_OnlineRun(benchmark::State& state) {
  const auto mode = static_cast<WorldStateMode>(state.range(0));
  const auto stats = sample_stats(75, 2);
  ParticleFilterConfig config;
  config.world_state_mode = mode;
  for (auto _ : state) {
    const auto trace = run_online(stats, config, PriorConfig{}, CategorySet(5));
    benchmark::DoNotOptimize(trace.steps.size());
  }
}
BENCHMARK(BM_OnlineRun)->Arg(0)->Arg(1)->ArgNames({"sample_mode"})->Unit(benchmark::kMillisecond);

void BM_RejuvenateLate(benchmark::State& state) {
  const auto mode = static_cast<WorldStateMode>(state.range(0));
  const auto stats = sample_stats(75, 3);
  ParticleFilterConfig config;
  config.world_state_mode = mode;
  ParticleEnsemble ens(config, PriorConfig{}, CategorySet(5));
  for (const auto& s : stats) ens.reweight(s);
  const PriorConfig prior;
  const RejuvenationContext ctx{&ens.config(), &prior, &ens.world_prior(), ens.enumerates()};
  Particle p = ens.particles()[0];
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(rejuvenate(p, ens.history(), ctx, rng));
}
BENCHMARK(BM_RejuvenateLate)->Arg(0)->Arg(1)->ArgNames({"sample_mode"});

void BM_Retrospective(benchmark::State& state) {
  const auto stats = sample_stats(75, 5);
  const WorldStatePrior wp(PriorConfig{}, CategorySet(5));
  const MetaEstimate v = VisualSystem::uniform(CategorySet(5), 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(retrospective_infer(v, stats, wp));
}
BENCHMARK(BM_Retrospective);

void BM_SynthesizeRun(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synthesize_run(PriorConfig{}, CategorySet(5), 75, ++seed, "b"));
  }
}
BENCHMARK(BM_SynthesizeRun);

}  // namespace

BENCHMARK_MAIN();
