#include <benchmark/benchmark.h>

#include "v2c/cbm.hpp"
#include "v2c/rng.hpp"

using namespace v2c;

namespace {

struct Problem {
  cbm::ConceptActivations a;
  std::vector<std::int64_t> labels;
  cbm::WeightMatrix w;
};

Problem make_problem(std::size_t samples, std::size_t classes, std::size_t concepts) {
  Rng rng(7);
  Problem p{cbm::ConceptActivations{Matrix<double>(samples, concepts)}, {}, cbm::init_random(classes, concepts, 7)};
  for (auto& v : p.a.scores.data()) v = 0.3 * rng.uniform();
  for (std::size_t i = 0; i < samples; ++i) p.labels.push_back(static_cast<std::int64_t>(rng.below(classes)));
  return p;
}

void BM_Gradient(benchmark::State& state) {
  const auto classes = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem(512, classes, classes * 5);
  for (auto _ : state) benchmark::DoNotOptimize(cbm::gradient(p.a, p.labels, p.w));
}
BENCHMARK(BM_Gradient)->Arg(10)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto classes = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem(512, classes, classes * 5);
  for (auto _ : state) benchmark::DoNotOptimize(cbm::forward(p.a, p.w));
}
BENCHMARK(BM_Forward)->Arg(10)->Arg(200)->Unit(benchmark::kMillisecond);

// One epoch over 2000 samples, batch 512.
void BM_TrainEpoch(benchmark::State& state) {
  const auto p = make_problem(2000, 50, 250);
  cbm::TrainConfig cfg;
  cfg.max_epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(cbm::train(p.a, p.labels, cfg, p.w));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace
