// Copyright 2026 The capvit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "capvit/cost_model.hpp"
#include "capvit/rng.hpp"
#include "capvit/trainer.hpp"

namespace {

using namespace capvit;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape), false);
  SplitMix64 rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Graph<float> g(/*recording=*/false);
    benchmark::DoNotOptimize(ops::matmul(g, a, b).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_Attention(benchmark::State& state) {
  const auto seq = static_cast<std::size_t>(state.range(0));
  const std::size_t batch = 16, d = 64;
  const auto q = random_tensor({batch * seq, d}, 1), k = random_tensor({batch * seq, d}, 2),
             v = random_tensor({batch * seq, d}, 3);
  const ops::AttentionShape shape{batch, seq, 4};
  const auto mask = ops::AttentionMask::prefix_causal(seq / 2);
  for (auto _ : state) {
    Graph<float> g(/*recording=*/false);
    benchmark::DoNotOptimize(ops::attention(g, q, k, v, shape, mask).data().data());
  }
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(32)->Arg(64);

// One forward + backward of the default training loss; arg 0 is the keep
// ratio in percent, arg 1 selects the contrastive baseline.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig mc;
  mc.decoder.keep_ratio = static_cast<double>(state.range(0)) / 100.0;
  if (state.range(1) != 0) mc.pipeline = Pipeline::kV1Contrastive;
  const auto model = Model<float>::init(mc, 0);
  const Dataset data({0, 16, synth::CaptionMode::kRecapV2, 0.0}, synth::grammar_vocab(),
                     mc.decoder.max_len);
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch<float> batch = data.batch<float>(idx, mc.encoder);
  auto params = model.params();
  std::uint64_t step = 0;
  for (auto _ : state) {
    for (auto& p : params) p.tensor.zero_grad();
    Graph<float> g;
    StepLoss<float> loss = training_loss(g, model, batch, MaskKey{0, 0, ++step});
    g.backward(loss.loss);
    benchmark::DoNotOptimize(loss.loss.item());
  }
}
BENCHMARK(BM_TrainStep)
    ->Args({100, 0})
    ->Args({35, 0})
    ->Args({100, 1})
    ->Unit(benchmark::kMillisecond);

void BM_CostModel(benchmark::State& state) {
  const auto presets = cost::load_presets(cost::default_presets_path());
  for (auto _ : state) {
    for (const auto& p : presets) {
      benchmark::DoNotOptimize(cost::evaluate(p.spec).training);
    }
  }
}
BENCHMARK(BM_CostModel);

}  // namespace

BENCHMARK_MAIN();
