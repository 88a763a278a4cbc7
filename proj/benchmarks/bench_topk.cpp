#include <benchmark/benchmark.h>

#include "v2c/embkit.hpp"
#include "v2c/rng.hpp"

using v2c::embkit::EmbeddingMatrix;

namespace {

EmbeddingMatrix unit_rows(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  v2c::Rng rng(seed);
  std::vector<float> data(rows * dim);
  for (auto& x : data) x = static_cast<float>(rng.normal());
  return v2c::embkit::normalize_rows(EmbeddingMatrix(rows, dim, std::move(data)));
}

void BM_CosineTopK(benchmark::State& state) {
  const auto codebook = unit_rows(static_cast<std::size_t>(state.range(0)), 768, 1);
  const auto query = unit_rows(1, 768, 2);
  const auto k = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(v2c::embkit::cosine_topk(query.row(0), codebook, k));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CosineTopK)->Args({500, 5})->Args({20000, 5})->Args({20000, 50});

void BM_EuclideanTopK(benchmark::State& state) {
  const auto codebook = unit_rows(static_cast<std::size_t>(state.range(0)), 768, 3);
  const auto query = unit_rows(1, 768, 4);
  for (auto _ : state) benchmark::DoNotOptimize(v2c::embkit::euclidean_topk(query.row(0), codebook, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EuclideanTopK)->Arg(500)->Arg(20000);

void BM_BatchSimilarity(benchmark::State& state) {
  const auto x = unit_rows(static_cast<std::size_t>(state.range(0)), 768, 5);
  const auto c = unit_rows(static_cast<std::size_t>(state.range(1)), 768, 6);
  for (auto _ : state) benchmark::DoNotOptimize(v2c::embkit::batch_similarity(x, c));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_BatchSimilarity)->Args({256, 500})->Args({1024, 2000})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
