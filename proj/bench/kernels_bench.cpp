// Serial reference vs OpenMP kernels on batch shapes a little larger than the
// desk-scale defaults (the per-epoch evaluation sweep is the hot path).
#include <benchmark/benchmark.h>

#include "osssl/kernels.hpp"
#include "osssl/model.hpp"

namespace {

using osssl::Vector;
using osssl::kernels::Backend;

std::vector<Vector> random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  osssl::Rng rng(seed);
  std::vector<Vector> out(n, Vector(d));
  for (auto& v : out)
    for (double& x : v) x = rng.normal();
  return out;
}

osssl::ModelParams bench_params() {
  osssl::Rng rng(1);
  return osssl::init_params({16, 32, 8, 6}, rng);
}

Backend backend_of(const benchmark::State& state) { return state.range(1) == 0 ? Backend::serial : Backend::omp; }

void BM_Forward(benchmark::State& state) {
  const auto params = bench_params();
  const auto xs = random_points(static_cast<std::size_t>(state.range(0)), 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(osssl::kernels::forward_batch(params, xs, backend_of(state)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Backward(benchmark::State& state) {
  const auto params = bench_params();
  const auto xs = random_points(static_cast<std::size_t>(state.range(0)), 16, 3);
  const auto traces = osssl::kernels::serial::forward_batch(params, xs);
  std::vector<osssl::Upstream> up(xs.size(), osssl::Upstream::zeros(params.dims()));
  osssl::Rng rng(4);
  for (auto& u : up) {
    for (double& g : u.d_logits) g = rng.normal();
    for (double& g : u.d_feature) g = rng.normal();
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(osssl::kernels::backward_batch(params, traces, up, backend_of(state)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PairwiseDistances(benchmark::State& state) {
  const auto a = random_points(static_cast<std::size_t>(state.range(0)), 8, 5);
  const auto b = random_points(64, 8, 6);
  for (auto _ : state) benchmark::DoNotOptimize(osssl::kernels::pairwise_sq_distances(a, b, backend_of(state)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AssignNearest(benchmark::State& state) {
  const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 8, 7);
  const auto centers = random_points(10, 8, 8);
  std::vector<std::size_t> labels(pts.size());
  std::vector<double> d(pts.size());
  for (auto _ : state) {
    osssl::kernels::assign_nearest(pts, centers, labels, d, backend_of(state));
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void Args(benchmark::internal::Benchmark* b) {
  for (long n : {224L, 6000L, 50000L})
    for (long backend : {0L, 1L}) b->Args({n, backend});
  b->ArgNames({"n", "omp"});
}

}  // namespace

BENCHMARK(BM_Forward)->Apply(Args)->UseRealTime();
BENCHMARK(BM_Backward)->Apply(Args)->UseRealTime();
BENCHMARK(BM_PairwiseDistances)->Apply(Args)->UseRealTime();
BENCHMARK(BM_AssignNearest)->Apply(Args)->UseRealTime();

BENCHMARK_MAIN();
