#include <benchmark/benchmark.h>

#include "ssrc/harness.hpp"

using namespace ssrc;

namespace {

// Full D + G update at desk scale (64x64, base width 16).
void BM_TrainStep(benchmark::State& st) {
  TrainConfig c;
  c.batch_size = st.range(0);
  c.train_scenes = 16;
  c.test_scenes = 0;
  c.log_wall_time = false;
  Trainer t(c);
  for (auto _ : st) benchmark::DoNotOptimize(t.train_step());
}
BENCHMARK(BM_TrainStep)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SccLoss(benchmark::State& st) {
  TrainConfig c;
  const auto x = stack_images({generate_scene(c.source_spec, 1, 64, 64).image, generate_scene(c.source_spec, 2, 64, 64).image});
  const auto y = stack_images({generate_scene(c.target_spec, 3, 64, 64).image, generate_scene(c.target_spec, 4, 64, 64).image});
  std::mt19937_64 rng(0);
  for (auto _ : st) benchmark::DoNotOptimize(scc_loss(x, y, c.scc, rng));
}
BENCHMARK(BM_SccLoss)->Unit(benchmark::kMillisecond);

}  // namespace
