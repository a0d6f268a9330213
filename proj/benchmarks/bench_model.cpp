// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dcsst/model.hpp"
#include "dcsst/ops.hpp"

namespace dcsst {
namespace {

ModelConfig preset(int64_t which) { return which == 0 ? ModelConfig::micro() : ModelConfig::desk(); }

void BM_ModelForward(benchmark::State& state) {
  const ModelConfig cfg = preset(state.range(0));
  const DcsStModel model(cfg, 0);
  Rng rng(1);
  const Tensor x = Tensor::randn({4, cfg.in_channels, cfg.image_size, cfg.image_size}, rng);
  const CheckedModeScope checked(false);
  for (auto _ : state) benchmark::DoNotOptimize(model.classify(x));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ModelForward)->ArgName("desk")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  const ModelConfig cfg = preset(state.range(0));
  DcsStModel model(cfg, 0);
  model.set_requires_grad(true);
  Rng rng(1);
  const Tensor x = Tensor::randn({4, cfg.in_channels, cfg.image_size, cfg.image_size}, rng);
  const std::vector<int> y{0, 1, 2, 3};
  const CheckedModeScope checked(false);
  for (auto _ : state) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = cross_entropy(model.classify(x), y);
    }
    tape.backward(loss);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ModelForwardBackward)->ArgName("desk")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace dcsst
