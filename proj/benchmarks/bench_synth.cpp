#include <benchmark/benchmark.h>

#include "npos/rng.hpp"
#include "npos/synth.hpp"

namespace {

std::vector<npos::ClassQueue> random_queues(int classes, std::size_t fill,
                                            Eigen::Index d) {
  npos::Rng rng(11);
  std::vector<npos::ClassQueue> queues;
  for (int c = 0; c < classes; ++c) {
    npos::ClassQueue q(fill, d);
    npos::Vector v(d);
    for (std::size_t i = 0; i < fill; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal() + 2.0 * c;
      q.push(v / v.norm());
    }
    queues.push_back(std::move(q));
  }
  return queues;
}

void bm_synthesize(benchmark::State& state) {
  const std::size_t fill = static_cast<std::size_t>(state.range(0));
  const int p = static_cast<int>(state.range(1));
  auto queues = random_queues(3, fill, 16);
  npos::SynthesisConfig cfg;
  cfg.k = 50;
  cfg.m = 20;
  cfg.p = p;
  cfg.sigma2 = 0.1;
  std::uint64_t step = 0;
  for (auto _ : state) {
    auto batch = npos::synthesize(queues, cfg, 7, step++);
    benchmark::DoNotOptimize(batch.vectors.data());
  }
}

void bm_reject_filter(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  npos::Rng rng(13);
  npos::Matrix refset(400, 16);
  for (Eigen::Index i = 0; i < refset.rows(); ++i)
    for (Eigen::Index j = 0; j < refset.cols(); ++j)
      refset(i, j) = rng.normal();
  npos::Vector center = refset.row(0);
  npos::Matrix candidates = npos::sample_candidates(center, 0.1, p, rng);
  npos::SynthesisConfig cfg;
  cfg.k = 50;
  cfg.m = 20;
  cfg.p = p;
  std::vector<double> id_dists(400, 1.0);
  for (auto _ : state) {
    auto result = npos::reject_filter(candidates, refset, cfg, id_dists);
    benchmark::DoNotOptimize(result.accepted.data());
  }
  state.SetItemsProcessed(state.iterations() * p);
}

}  // namespace

BENCHMARK(bm_synthesize)
    ->Args({200, 200})
    ->Args({600, 200})
    ->Args({600, 1000})
    ->Unit(benchmark::kMillisecond);

BENCHMARK(bm_reject_filter)->Arg(200)->Arg(1000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
