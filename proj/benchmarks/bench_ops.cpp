// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dcsst/attention.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/window_predictor.hpp"

namespace dcsst {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = Tensor::randn({n, n}, rng), b = Tensor::randn({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

AttentionParams params(std::size_t c, Rng& rng) {
  AttentionParams p;
  for (Tensor* t : {&p.wq, &p.wk, &p.wv, &p.wo}) *t = Tensor::randn({c, c}, rng, 0.1);
  for (Tensor* t : {&p.bq, &p.bk, &p.bv, &p.bo}) *t = Tensor::zeros({c});
  return p;
}

// args: window, shift
void BM_WindowAttention(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = Tensor::randn({4, 32, 16, 16}, rng);
  const AttentionParams p = params(32, rng);
  const WindowSpec spec{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1))};
  for (auto _ : state) benchmark::DoNotOptimize(window_attention(x, p, AttentionConfig{32, 2}, spec));
}
BENCHMARK(BM_WindowAttention)->Args({4, 0})->Args({4, 2})->Args({8, 4})->Args({16, 0});

void BM_DynamicWindowAttention(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = Tensor::randn({4, 32, 16, 16}, rng);
  const AttentionParams p = params(32, rng);
  const StageMixture mix{Tensor::full({4, 3}, 1.0 / 3.0)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(dynamic_window_attention(x, mix, p, AttentionConfig{32, 2}, {2, 4, 8}, true));
  }
}
BENCHMARK(BM_DynamicWindowAttention);

void BM_Softmax(benchmark::State& state) {
  Rng rng(4);
  const Tensor x = Tensor::randn({256, 64}, rng);
  const CheckedModeScope checked(state.range(0) != 0);
  for (auto _ : state) benchmark::DoNotOptimize(softmax(x, -1));
}
BENCHMARK(BM_Softmax)->ArgName("checked")->Arg(0)->Arg(1);

}  // namespace
}  // namespace dcsst
