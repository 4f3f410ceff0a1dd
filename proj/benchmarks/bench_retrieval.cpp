#include <benchmark/benchmark.h>

#include <cmath>
#include <string>

#include "resee/rng.hpp"
#include "resee/turn_retrieval.hpp"

namespace {

std::vector<double> unit(resee::Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

void BM_RetrieveTopK(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  constexpr std::size_t dim = 64;
  resee::Rng rng(1);
  resee::retrieval::EmbeddingMatrix keys;
  keys.dim = dim;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto v = unit(rng, dim);
    keys.data.insert(keys.data.end(), v.begin(), v.end());
    ids.push_back("img-" + std::to_string(i));
  }
  const resee::retrieval::EmbeddingIndex index(std::move(keys), std::move(ids));
  const auto q = unit(rng, dim);
  for (auto _ : state) benchmark::DoNotOptimize(resee::retrieval::retrieve_topk(index, q, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_RetrieveTopK)->Args({5000, 5})->Args({50000, 5})->Args({50000, 10});

void BM_HashEmbed(benchmark::State& state) {
  const resee::retrieval::HashProjectionEmbedder embedder(64, 0);
  const std::vector<std::string> texts(32, "a small dog runs across the green park near the river");
  for (auto _ : state) benchmark::DoNotOptimize(resee::retrieval::embed_texts(texts, embedder));
}
BENCHMARK(BM_HashEmbed);

}  // namespace
