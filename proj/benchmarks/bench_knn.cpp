#include <benchmark/benchmark.h>

#include "npos/knn.hpp"
#include "npos/rng.hpp"

namespace {

npos::Matrix random_rows(npos::Rng& rng, Eigen::Index n, Eigen::Index d) {
  npos::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

void bm_knn_batch(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::Index d = state.range(1);
  const int k = static_cast<int>(state.range(2));
  npos::Rng rng(7);
  npos::EmbeddingSet refset;
  refset.data = random_rows(rng, n, d);
  refset.labels.assign(static_cast<std::size_t>(n), 0);
  npos::KnnParams params;
  params.k = k;
  params.exclude_self = true;
  for (auto _ : state) {
    auto dists = npos::knn_distances_batch(refset.data, refset, params);
    benchmark::DoNotOptimize(dists.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_knn_dense(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::Index d = state.range(1);
  const int k = static_cast<int>(state.range(2));
  npos::Rng rng(7);
  npos::Matrix refset = random_rows(rng, n, d);
  for (auto _ : state) {
    auto dists = npos::knn_distances_dense(refset, refset, k, 0);
    benchmark::DoNotOptimize(dists.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(bm_knn_batch)
    ->Args({600, 16, 50})
    ->Args({600, 128, 300})
    ->Args({2000, 128, 300})
    ->Unit(benchmark::kMillisecond);

BENCHMARK(bm_knn_dense)
    ->Args({600, 16, 50})
    ->Args({600, 128, 300})
    ->Args({2000, 128, 300})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
