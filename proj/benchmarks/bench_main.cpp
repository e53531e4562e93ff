#include <benchmark/benchmark.h>

#include <random>

#include "knotseg/context.hpp"
#include "knotseg/gradboost.hpp"
#include "knotseg/kernelbank.hpp"
#include "knotseg/pooling.hpp"
#include "knotseg/synthetic.hpp"

namespace {

using namespace knotseg;

ImagePlane noise_plane(int size) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImagePlane p(size, size);
  for (double& v : p.values()) v = u(rng);
  return p;
}

SyntheticImage blob(int size, std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = SyntheticKind::BlobWorld;
  s.size = size;
  s.seed = seed;
  return blob_world(s);
}

void BM_Convolve(benchmark::State& state) {
  const auto img = noise_plane(256);
  Kernel k;
  k.side = static_cast<int>(state.range(0));
  k.weights.assign(static_cast<std::size_t>(k.side) * k.side, 1.0 / (k.side * k.side));
  for (auto _ : state) benchmark::DoNotOptimize(convolve(img, k));
  state.SetItemsProcessed(state.iterations() * img.size());
}
BENCHMARK(BM_Convolve)->Arg(5)->Arg(9)->Arg(15)->Unit(benchmark::kMicrosecond);

void BM_MaxPool(benchmark::State& state) {
  const auto img = noise_plane(256);
  for (auto _ : state) benchmark::DoNotOptimize(max_pool(img, static_cast<int>(state.range(0))));
  state.SetItemsProcessed(state.iterations() * img.size());
}
BENCHMARK(BM_MaxPool)->Arg(1)->Arg(3)->Arg(7)->Unit(benchmark::kMicrosecond);

void BM_Slic(benchmark::State& state) {
  const auto img = blob(static_cast<int>(state.range(0)), 1).image;
  for (auto _ : state) benchmark::DoNotOptimize(slic(img, 12, 10.0));
  state.SetItemsProcessed(state.iterations() * img.size());
}
BENCHMARK(BM_Slic)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_PredictScores(benchmark::State& state) {
  const auto train = blob(128, 1);
  const auto stack = make_base_stack(train.image, StackRecipe{});
  auto cfg = TrainConfig::improved();
  cfg.rounds = static_cast<int>(state.range(0));
  cfg.seed = 1;
  const BoostInput in{&stack, &train.labels};
  const auto model = train_kernelboost(std::span(&in, 1), cfg).model;
  const auto test = make_base_stack(blob(128, 2).image, StackRecipe{});
  for (auto _ : state) benchmark::DoNotOptimize(predict_scores(model, test));
  state.SetItemsProcessed(state.iterations() * 128 * 128);
}
BENCHMARK(BM_PredictScores)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
