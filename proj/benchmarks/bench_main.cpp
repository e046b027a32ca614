#include <benchmark/benchmark.h>

#include <random>

#include "tamseg/conv.hpp"
#include "tamseg/metrics.hpp"
#include "tamseg/synth.hpp"
#include "tamseg/tam.hpp"

namespace {

using namespace tamseg;

Tensor random(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from_values(std::move(shape), v);
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  Tensor x = random({c, s, s}, rng);
  Tensor w = random({c, c, 3, 3}, rng);
  Tensor b = random({c}, rng);
  NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv(x, w, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(9 * c * c * s * s));
}
BENCHMARK(BM_Conv3x3)->Args({16, 64})->Args({64, 16})->Args({128, 8});

void BM_TamForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(2);
  TemporalAttention tam(TamConfig{32, 32, 4, 2}, rng);
  FeatureStack stack;
  for (std::size_t i = 0; i < t; ++i) stack.frames.push_back(random({32, s, s}, rng));
  NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(tam.forward(stack, false));
}
BENCHMARK(BM_TamForward)->Args({2, 8})->Args({3, 8})->Args({5, 8})->Args({3, 16});

void BM_Hausdorff(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  SequenceSpec spec;
  spec.extents = {s, s};
  spec.frames = 2;
  Sequence seq = generate(spec);
  for (auto _ : state) benchmark::DoNotOptimize(hausdorff(seq.masks[0], seq.masks[1], 2));
}
BENCHMARK(BM_Hausdorff)->Arg(64)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
